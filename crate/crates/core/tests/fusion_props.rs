mod common;

use approx::assert_relative_eq;
use fetalscope::fusion::{
    agreement_fusion, consistency_weighted, ellipse_circumference, fit_ellipse, label_majority_vote,
    median_outlier_correct, pixel_majority_vote, ramanujan_perimeter, EllipseParams, LabelVote,
};
use fetalscope::types::Mask;
use proptest::prelude::*;

const CLASSES: [&str; 4] = ["abdomen", "brain", "femur", "thorax"];

fn masks_strategy() -> impl Strategy<Value = (u32, u32, Vec<Vec<bool>>)> {
    (1u32..12, 1u32..12, 1usize..6).prop_flat_map(|(w, h, n)| {
        let len = (w * h) as usize;
        (Just(w), Just(h), prop::collection::vec(prop::collection::vec(any::<bool>(), len), n))
    })
}

fn to_masks(w: u32, h: u32, data: &[Vec<bool>]) -> Vec<Mask> {
    data.iter().map(|d| Mask::new(w, h, d.clone(), 0.5).unwrap()).collect()
}

proptest! {
    #[test]
    fn pixel_vote_matches_counting((w, h, data) in masks_strategy(), rot in 0usize..6) {
        let masks = to_masks(w, h, &data);
        let refs: Vec<&Mask> = masks.iter().collect();
        let fused = pixel_majority_vote(&refs).unwrap();
        let oracle = common::pixel_vote_oracle(&data);
        prop_assert_eq!(fused.data(), oracle.as_slice());
        let mut rotated = refs.clone();
        rotated.rotate_left(rot % refs.len());
        prop_assert_eq!(pixel_majority_vote(&rotated).unwrap(), fused);
    }

    #[test]
    fn median_outlier_stays_in_range(values in prop::collection::vec(-1e4f64..1e4, 1..9), delta in 0.01f64..500.0) {
        let (f, flags) = median_outlier_correct(&values, delta).unwrap();
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(f >= lo - 1e-9 && f <= hi + 1e-9);
        prop_assert_eq!(flags.len(), values.len());
    }

    #[test]
    fn median_outlier_with_huge_delta_is_mean(values in prop::collection::vec(-1e3f64..1e3, 1..9)) {
        let (f, flags) = median_outlier_correct(&values, 1e12).unwrap();
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        prop_assert!((f - mean).abs() <= 1e-9 * (1.0 + mean.abs()));
        prop_assert!(flags.iter().all(|x| !x));
    }

    #[test]
    fn consistency_weighted_in_range_and_symmetric(values in prop::collection::vec(-1e3f64..1e3, 1..9), eps in 0.01f64..5.0) {
        let f = consistency_weighted(&values, eps).unwrap();
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(f >= lo - 1e-9 && f <= hi + 1e-9);
        let mut rev = values.clone();
        rev.reverse();
        prop_assert_eq!(consistency_weighted(&rev, eps).unwrap(), f);
    }

    #[test]
    fn consistency_weighted_equidistant_is_mean(m in -100f64..100.0, d in 0.0f64..50.0, eps in 0.01f64..5.0) {
        let values = [m - d, m, m + d];
        let f = consistency_weighted(&values, eps).unwrap();
        prop_assert!((f - m).abs() <= 1e-9 * (1.0 + m.abs()));
    }

    #[test]
    fn circumference_scales_linearly(a in 1f64..200.0, ratio in 0.05f64..1.0, s in 0.01f64..2.0) {
        let p = EllipseParams::new(0.0, 0.0, a, a * ratio, 0.0).unwrap();
        let base = ellipse_circumference(&p, 1.0).unwrap();
        let scaled = ellipse_circumference(&p, s).unwrap();
        prop_assert!((scaled - s * base).abs() <= 1e-12 * scaled);
    }
}

#[test]
fn label_rules_match_exhaustive_enumeration() {
    let mut seen = 0;
    for n in 1..=4u32 {
        for code in 0..4usize.pow(n) {
            let labels: Vec<&str> = (0..n).map(|i| CLASSES[code / 4usize.pow(i) % 4]).collect();
            assert_eq!(label_majority_vote(&labels).unwrap(), common::label_majority_oracle(&labels), "{labels:?}");
            let tools: Vec<String> = (0..n).map(|i| format!("t{i}")).collect();
            let votes: Vec<LabelVote> = labels
                .iter()
                .zip(&tools)
                .map(|(l, t)| LabelVote { tool_id: t.clone(), label: l.to_string(), confidence: 0.9 })
                .collect();
            // try both identity and reversed priority
            for reverse in [false, true] {
                let mut priority = tools.clone();
                if reverse {
                    priority.reverse();
                }
                let pairs: Vec<(&str, &str)> = tools.iter().map(String::as_str).zip(labels.iter().copied()).collect();
                let prio: Vec<&str> = priority.iter().map(String::as_str).collect();
                assert_eq!(agreement_fusion(&votes, &priority).unwrap(), common::agreement_oracle(&pairs, &prio));
            }
            seen += 1;
        }
    }
    assert_eq!(seen, 4 + 16 + 64 + 256);
}

#[test]
fn circle_circumference_is_exact() {
    for r in [1.0, 7.5, 50.0, 100.0, 333.3] {
        let p = EllipseParams::new(0.0, 0.0, r, r, 0.0).unwrap();
        assert_relative_eq!(ellipse_circumference(&p, 0.1).unwrap(), 2.0 * std::f64::consts::PI * r * 0.1, max_relative = 1e-9);
    }
}

#[test]
fn ramanujan_tracks_quadrature() {
    for i in 0..=190 {
        let ratio = 1.0 + i as f64 * 0.1;
        let (a, b) = (10.0 * ratio, 10.0);
        assert_relative_eq!(ramanujan_perimeter(a, b), common::arc_length(a, b), max_relative = 1e-4);
    }
    assert_relative_eq!(common::arc_length(2.0, 1.0), 9.6884, max_relative = 1e-4);
}

#[test]
fn fit_recovers_a_rotated_ellipse() {
    let truth = EllipseParams::new(100.0, 90.0, 80.0, 40.0, 30f64.to_radians()).unwrap();
    let fit = fit_ellipse(&truth.rasterize(200, 180, 1.0).unwrap()).unwrap();
    assert!((fit.cx - 100.0).abs() < 2.0 && (fit.cy - 90.0).abs() < 2.0);
    assert!((fit.a - 80.0).abs() < 2.0 && (fit.b - 40.0).abs() < 2.0);
    assert!((fit.theta - truth.theta).abs().to_degrees() < 3.0);
}

#[test]
fn tiny_masks_are_degenerate() {
    let one = Mask::from_fn(5, 5, 1.0, |x, y| x == 2 && y == 2).unwrap();
    assert!(matches!(fit_ellipse(&one), Err(fetalscope::Error::DegenerateFit(_))));
    let empty = Mask::empty(5, 5, 1.0).unwrap();
    assert!(fit_ellipse(&empty).is_err());
}
