//! Ellipse fitting on segmentation masks and circumference measurement.
//!
//! The fit is the direct least-squares conic fit constrained to ellipses
//! (Fitzgibbon, Pilu & Fisher) in the numerically stable block form of
//! Halíř & Flusser, applied to the crack-edge midpoints of the largest
//! component's outer boundary.

use std::f64::consts::PI;

use nalgebra::{Matrix3, SymmetricEigen, Vector3, Matrix2};
use serde::{Deserialize, Serialize};

use super::components::{label_components, largest_label};
use crate::error::{Error, Result};
use crate::types::{Mask, Measurement, Unit};

/// Geometric ellipse in pixel coordinates (pixel centres on the integer
/// lattice, x to the right, y down).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipseParams {
    pub cx: f64,
    pub cy: f64,
    /// Semi-major axis, px.
    pub a: f64,
    /// Semi-minor axis, px.
    pub b: f64,
    /// Major-axis orientation in [0, π).
    pub theta: f64,
    /// Mean first-order (Sampson) distance of the fitted points, px.
    pub residual: f64,
}

impl EllipseParams {
    pub fn new(cx: f64, cy: f64, a: f64, b: f64, theta: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite() && b > 0.0 && a >= b) {
            return Err(Error::invalid(format!("semi-axes must satisfy a >= b > 0, got a={a}, b={b}")));
        }
        Ok(Self {
            cx,
            cy,
            a,
            b,
            theta: theta.rem_euclid(PI),
            residual: 0.0,
        })
    }

    /// Whether the point lies inside or on the ellipse.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.theta.sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }

    /// Rasterizes the filled ellipse: a pixel is set when its centre is inside.
    pub fn rasterize(&self, width: u32, height: u32, spacing: f64) -> Result<Mask> {
        Mask::from_fn(width, height, spacing, |x, y| self.contains(x as f64, y as f64))
    }
}

/// Conic coefficients of `A x² + B xy + C y² + D x + E y + F = 0`.
#[derive(Debug, Clone, Copy)]
struct Conic([f64; 6]);

impl Conic {
    fn eval(&self, x: f64, y: f64) -> f64 {
        let [a, b, c, d, e, f] = self.0;
        a * x * x + b * x * y + c * y * y + d * x + e * y + f
    }

    fn grad(&self, x: f64, y: f64) -> (f64, f64) {
        let [a, b, c, d, e, _] = self.0;
        (2.0 * a * x + b * y + d, b * x + 2.0 * c * y + e)
    }

    fn sampson(&self, x: f64, y: f64) -> f64 {
        let (gx, gy) = self.grad(x, y);
        let g = (gx * gx + gy * gy).sqrt();
        if g == 0.0 {
            f64::INFINITY
        } else {
            self.eval(x, y).abs() / g
        }
    }

    fn to_ellipse(self) -> Option<(f64, f64, f64, f64, f64)> {
        let [a, b, c, d, e, f] = self.0;
        let disc = b * b - 4.0 * a * c;
        if !(disc < 0.0) {
            return None;
        }
        // centre: gradient vanishes
        let det = 4.0 * a * c - b * b;
        let cx = (b * e - 2.0 * c * d) / det;
        let cy = (b * d - 2.0 * a * e) / det;
        let f0 = f + 0.5 * (d * cx + e * cy);
        let q = Matrix2::new(a, b / 2.0, b / 2.0, c);
        let eig = SymmetricEigen::new(q);
        let mut axes = Vec::with_capacity(2);
        for i in 0..2 {
            let r = -f0 / eig.eigenvalues[i];
            if !(r > 0.0 && r.is_finite()) {
                return None;
            }
            axes.push((r.sqrt(), eig.eigenvectors.column(i).into_owned()));
        }
        axes.sort_by(|l, r| r.0.total_cmp(&l.0));
        let (major, dir) = (&axes[0].0, &axes[0].1);
        let minor = axes[1].0;
        let theta = dir[1].atan2(dir[0]).rem_euclid(PI);
        Some((cx, cy, *major, minor, theta))
    }
}

/// Crack-edge midpoints along the outer boundary of the largest component,
/// together with the number of distinct boundary pixels.
fn boundary_points(mask: &Mask) -> Result<(Vec<[f64; 2]>, Vec<[f64; 2]>)> {
    let (labels, sizes) = label_components(mask);
    let keep = largest_label(&sizes).ok_or(Error::EmptyMask)?;
    let (w, h) = (mask.width as i64, mask.height as i64);
    let inside = |x: i64, y: i64| {
        x >= 0 && y >= 0 && x < w && y < h && labels[(y * w + x) as usize] == keep
    };
    // Holes inside the component are not part of the outer boundary: flood
    // the background from the image border to tell them apart.
    let mut outside = vec![false; labels.len()];
    let mut stack: Vec<(i64, i64)> = Vec::new();
    for x in 0..w {
        stack.push((x, 0));
        stack.push((x, h - 1));
    }
    for y in 0..h {
        stack.push((0, y));
        stack.push((w - 1, y));
    }
    while let Some((x, y)) = stack.pop() {
        if x < 0 || y < 0 || x >= w || y >= h {
            continue;
        }
        let i = (y * w + x) as usize;
        if outside[i] || labels[i] == keep {
            continue;
        }
        outside[i] = true;
        stack.extend([(x - 1, y), (x + 1, y), (x, y - 1), (x, y + 1)]);
    }
    let is_exterior = |x: i64, y: i64| {
        x < 0 || y < 0 || x >= w || y >= h || outside[(y * w + x) as usize]
    };
    let mut edges = Vec::new();
    let mut pixels = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !inside(x, y) {
                continue;
            }
            let mut on_boundary = false;
            for (dx, dy) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
                if is_exterior(x + dx, y + dy) {
                    on_boundary = true;
                    edges.push([x as f64 + 0.5 * dx as f64, y as f64 + 0.5 * dy as f64]);
                }
            }
            if on_boundary {
                pixels.push([x as f64, y as f64]);
            }
        }
    }
    Ok((edges, pixels))
}

fn is_collinear(points: &[[f64; 2]]) -> bool {
    let n = points.len() as f64;
    let (mx, my) = points
        .iter()
        .fold((0.0, 0.0), |(sx, sy), p| (sx + p[0] / n, sy + p[1] / n));
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in points {
        let (dx, dy) = (p[0] - mx, p[1] - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let eig = SymmetricEigen::new(Matrix2::new(sxx, sxy, sxy, syy));
    let lo = eig.eigenvalues.min();
    let hi = eig.eigenvalues.max();
    hi <= 0.0 || lo <= 1e-9 * hi
}

/// Null vector of a (near-)singular 3x3 matrix: the largest cross product
/// of two of its rows.
fn null_vector(m: &Matrix3<f64>) -> Option<Vector3<f64>> {
    let rows = [m.row(0).transpose(), m.row(1).transpose(), m.row(2).transpose()];
    [(0, 1), (0, 2), (1, 2)]
        .iter()
        .map(|&(i, j)| rows[i].cross(&rows[j]))
        .max_by(|a, b| a.norm_squared().total_cmp(&b.norm_squared()))
        .filter(|v| v.norm_squared() > 0.0)
}

/// Direct least-squares ellipse fit on raw points.
pub fn fit_ellipse_points(points: &[[f64; 2]]) -> Result<EllipseParams> {
    if points.len() < 6 {
        return Err(Error::DegenerateFit(format!("{} points, need at least 6", points.len())));
    }
    if is_collinear(points) {
        return Err(Error::DegenerateFit("points are collinear".into()));
    }
    // normalize for conditioning
    let n = points.len() as f64;
    let (mx, my) = points
        .iter()
        .fold((0.0, 0.0), |(sx, sy), p| (sx + p[0] / n, sy + p[1] / n));
    let scale = (points
        .iter()
        .map(|p| (p[0] - mx).powi(2) + (p[1] - my).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    let norm: Vec<(f64, f64)> = points
        .iter()
        .map(|p| ((p[0] - mx) / scale, (p[1] - my) / scale))
        .collect();

    let mut s1 = Matrix3::<f64>::zeros();
    let mut s2 = Matrix3::<f64>::zeros();
    let mut s3 = Matrix3::<f64>::zeros();
    for &(x, y) in &norm {
        let d1 = Vector3::new(x * x, x * y, y * y);
        let d2 = Vector3::new(x, y, 1.0);
        s1 += d1 * d1.transpose();
        s2 += d1 * d2.transpose();
        s3 += d2 * d2.transpose();
    }
    let s3_inv = s3
        .try_inverse()
        .ok_or_else(|| Error::DegenerateFit("singular scatter matrix".into()))?;
    let t = -s3_inv * s2.transpose();
    let m = s1 + s2 * t;
    // premultiply by the inverse of the constraint block [[0,0,2],[0,-1,0],[2,0,0]]
    let reduced = Matrix3::from_rows(&[
        (m.row(2) / 2.0).into_owned(),
        (-m.row(1)).into_owned(),
        (m.row(0) / 2.0).into_owned(),
    ]);

    let mut best: Option<(Conic, f64)> = None;
    for ev in reduced.complex_eigenvalues().iter() {
        if ev.im.abs() > 1e-9 * ev.re.abs().max(1.0) {
            continue;
        }
        let shifted = reduced - Matrix3::identity() * ev.re;
        let Some(a1) = null_vector(&shifted) else { continue };
        let constraint = 4.0 * a1[0] * a1[2] - a1[1] * a1[1];
        if constraint <= 0.0 {
            continue;
        }
        let a2 = t * a1;
        let conic = Conic([a1[0], a1[1], a1[2], a2[0], a2[1], a2[2]]);
        let resid: f64 = norm.iter().map(|&(x, y)| conic.sampson(x, y)).sum::<f64>() / n;
        if best.as_ref().is_none_or(|(_, r)| resid < *r) {
            best = Some((conic, resid));
        }
    }
    let (conic, resid) = best.ok_or_else(|| Error::DegenerateFit("no elliptical solution".into()))?;
    let (ucx, ucy, a, b, theta) = conic
        .to_ellipse()
        .ok_or_else(|| Error::DegenerateFit("fitted conic is not a real ellipse".into()))?;
    let params = EllipseParams {
        cx: mx + scale * ucx,
        cy: my + scale * ucy,
        a: a * scale,
        b: b * scale,
        theta,
        residual: resid * scale,
    };
    if !(params.b > 0.0 && params.a.is_finite() && params.residual.is_finite()) {
        return Err(Error::DegenerateFit("non-finite ellipse parameters".into()));
    }
    Ok(params)
}

/// Fits an ellipse to the outer boundary of the mask's largest component.
pub fn fit_ellipse(mask: &Mask) -> Result<EllipseParams> {
    let (edges, pixels) = boundary_points(mask)?;
    if pixels.len() < 6 {
        return Err(Error::DegenerateFit(format!(
            "{} boundary pixels, need at least 6",
            pixels.len()
        )));
    }
    if is_collinear(&pixels) {
        return Err(Error::DegenerateFit("boundary pixels are collinear".into()));
    }
    fit_ellipse_points(&edges)
}

/// Perimeter in pixels by Ramanujan's second approximation.
pub fn ramanujan_perimeter(a: f64, b: f64) -> f64 {
    let h = ((a - b) / (a + b)).powi(2);
    PI * (a + b) * (1.0 + 3.0 * h / (10.0 + (4.0 - 3.0 * h).sqrt()))
}

/// Circumference in millimetres.
pub fn ellipse_circumference(params: &EllipseParams, spacing_mm_per_px: f64) -> Result<f64> {
    if !(spacing_mm_per_px.is_finite() && spacing_mm_per_px > 0.0) {
        return Err(Error::invalid("pixel spacing must be positive"));
    }
    Ok(ramanujan_perimeter(params.a, params.b) * spacing_mm_per_px)
}

/// Where the measurement in [`biometry_with_fallback`] came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiometryTrace {
    /// "fused" or "fallback:<tool id>".
    pub source: String,
    pub ellipse: EllipseParams,
    /// Candidates rejected before the accepted one, with the reason.
    pub rejected: Vec<(String, String)>,
}

/// Ellipse circumference from the fused mask, falling back to the per-tool
/// masks in priority order when the fused fit fails or its residual
/// exceeds `residual_cap`.
pub fn biometry_with_fallback(
    fused: Option<&Mask>,
    per_tool: &[(String, Mask)],
    residual_cap: f64,
    spacing_mm_per_px: f64,
    provenance: &str,
) -> Result<(Measurement, BiometryTrace)> {
    let mut rejected = Vec::new();
    let candidates = fused
        .map(|m| ("fused".to_string(), m))
        .into_iter()
        .chain(per_tool.iter().map(|(id, m)| (format!("fallback:{id}"), m)));
    for (source, mask) in candidates {
        match fit_ellipse(mask) {
            Ok(e) if e.residual <= residual_cap => {
                let mm = ellipse_circumference(&e, spacing_mm_per_px)?;
                let m = Measurement::new(mm, Unit::Mm, provenance)?;
                return Ok((
                    m,
                    BiometryTrace {
                        source,
                        ellipse: e,
                        rejected,
                    },
                ));
            }
            Ok(e) => rejected.push((source, format!("residual {:.3} above cap", e.residual))),
            Err(err) => rejected.push((source, err.to_string())),
        }
    }
    Err(Error::AllFitsFailed)
}
