use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::Mask;

/// Box prompt plus point prompt for an interactive segmenter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptGeometry {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
    pub px: u32,
    pub py: u32,
}

/// 4-connected component labelling in raster-scan order.
///
/// Returns per-pixel labels (0 = background, components numbered from 1)
/// and the pixel count of each component (index `label - 1`).
pub fn label_components(mask: &Mask) -> (Vec<u32>, Vec<usize>) {
    let (w, h) = (mask.width as usize, mask.height as usize);
    let data = mask.data();
    let mut labels = vec![0u32; data.len()];
    let mut sizes = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..data.len() {
        if !data[start] || labels[start] != 0 {
            continue;
        }
        let label = sizes.len() as u32 + 1;
        labels[start] = label;
        queue.push_back(start);
        let mut count = 0;
        while let Some(i) = queue.pop_front() {
            count += 1;
            let (x, y) = (i % w, i / w);
            let mut visit = |j: usize| {
                if data[j] && labels[j] == 0 {
                    labels[j] = label;
                    queue.push_back(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        sizes.push(count);
    }
    (labels, sizes)
}

/// Label of the largest component; ties go to the lower label.
pub(crate) fn largest_label(sizes: &[usize]) -> Option<u32> {
    let mut best: Option<(usize, usize)> = None;
    for (i, &s) in sizes.iter().enumerate() {
        if best.is_none_or(|(_, bs)| s > bs) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i as u32 + 1)
}

/// Keeps only the largest 4-connected component.
pub fn largest_component(mask: &Mask) -> Result<Mask> {
    let (labels, sizes) = label_components(mask);
    let keep = largest_label(&sizes).ok_or(Error::EmptyMask)?;
    Mask::new(
        mask.width,
        mask.height,
        labels.iter().map(|&l| l == keep).collect(),
        mask.spacing_mm_per_px,
    )
}

/// Round half down, so x.5 maps to x.
fn round_half_down(v: f64) -> u32 {
    (v - 0.5).ceil().max(0.0) as u32
}

/// Tight bounding box and centroid of the largest component.
pub fn largest_component_prompt(mask: &Mask) -> Result<PromptGeometry> {
    let (labels, sizes) = label_components(mask);
    let keep = largest_label(&sizes).ok_or(Error::EmptyMask)?;
    let w = mask.width as usize;
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0usize, 0usize);
    let (mut sx, mut sy, mut n) = (0.0f64, 0.0f64, 0usize);
    for (i, _) in labels.iter().enumerate().filter(|(_, &l)| l == keep) {
        let (x, y) = (i % w, i / w);
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
        sx += x as f64;
        sy += y as f64;
        n += 1;
    }
    Ok(PromptGeometry {
        x: x0 as u32,
        y: y0 as u32,
        w: (x1 - x0 + 1) as u32,
        h: (y1 - y0 + 1) as u32,
        px: round_half_down(sx / n as f64),
        py: round_half_down(sy / n as f64),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn filled_square_prompt() {
        let m = Mask::from_fn(32, 32, 1.0, |x, y| (5..15).contains(&x) && (5..15).contains(&y)).unwrap();
        let p = largest_component_prompt(&m).unwrap();
        assert_eq!((p.x, p.y, p.w, p.h), (5, 5, 10, 10));
        assert_eq!((p.px, p.py), (9, 9));
    }

    #[test]
    fn picks_larger_component() {
        // 8x5 = 40 px block and a 7 px bar
        let m = Mask::from_fn(30, 20, 1.0, |x, y| {
            ((10..18).contains(&x) && (10..15).contains(&y)) || (y == 2 && (1..8).contains(&x))
        })
        .unwrap();
        let (_, sizes) = label_components(&m);
        assert_eq!(sizes, vec![7, 40]);
        let p = largest_component_prompt(&m).unwrap();
        assert_eq!((p.x, p.y, p.w, p.h), (10, 10, 8, 5));
        assert_eq!((p.px, p.py), (13, 12));
    }

    #[test]
    fn diagonal_pixels_are_separate_components() {
        let m = Mask::from_fn(3, 3, 1.0, |x, y| x == y).unwrap();
        let (_, sizes) = label_components(&m);
        assert_eq!(sizes, vec![1, 1, 1]);
        // three-way tie resolves to the first in raster order
        let p = largest_component_prompt(&m).unwrap();
        assert_eq!((p.px, p.py), (0, 0));
    }

    #[test]
    fn empty_mask_errors() {
        let m = Mask::empty(4, 4, 1.0).unwrap();
        assert!(matches!(largest_component_prompt(&m), Err(Error::EmptyMask)));
    }
}
