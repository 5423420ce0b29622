//! Browser bindings for three fetalscope operations: ellipse biometry on a
//! painted mask, growth-chart assessment, and video keyframe selection.

use fetalscope::fusion::{ellipse_circumference, fit_ellipse, EllipseParams};
use fetalscope::reporting::{invert_growth_curve, percentile_lookup, ChartMeasure, GrowthCharts};
use fetalscope::synth::synthetic_charts;
use fetalscope::types::Mask;
use fetalscope::workflows::{select_keyframes, CaptionTable, DEFAULT_CAPTIONING};
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

#[derive(Serialize)]
struct EllipseFit {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    theta_deg: f64,
    residual: f64,
    area_px: usize,
    circumference_mm: f64,
}

/// Fits an ellipse to a mask given as one byte per pixel (non-zero is
/// foreground). Returns JSON.
#[wasm_bindgen]
pub fn fit_mask(width: u32, height: u32, pixels: &[u8], spacing_mm_per_px: f64) -> Result<String, String> {
    let data = pixels.iter().map(|&p| p != 0).collect();
    let mask = Mask::new(width, height, data, spacing_mm_per_px).map_err(err)?;
    let e = fit_ellipse(&mask).map_err(err)?;
    let out = EllipseFit {
        cx: e.cx,
        cy: e.cy,
        a: e.a,
        b: e.b,
        theta_deg: e.theta.to_degrees(),
        residual: e.residual,
        area_px: mask.area(),
        circumference_mm: ellipse_circumference(&e, spacing_mm_per_px).map_err(err)?,
    };
    serde_json::to_string(&out).map_err(err)
}

/// Filled ellipse as one byte per pixel (1 inside, 0 outside).
#[wasm_bindgen]
pub fn rasterize_ellipse(width: u32, height: u32, cx: f64, cy: f64, a: f64, b: f64, theta_deg: f64) -> Result<Vec<u8>, String> {
    let (a, b) = if a >= b { (a, b) } else { (b, a) };
    let e = EllipseParams::new(cx, cy, a, b, theta_deg.to_radians()).map_err(err)?;
    let mask = e.rasterize(width, height, 1.0).map_err(err)?;
    Ok(mask.data().iter().map(|&p| p as u8).collect())
}

fn charts(csv: Option<String>) -> Result<GrowthCharts, String> {
    match csv {
        Some(text) if !text.trim().is_empty() => GrowthCharts::parse_csv(&text, "user").map_err(err),
        _ => Ok(synthetic_charts()),
    }
}

fn measure(name: &str) -> Result<ChartMeasure, String> {
    match name.to_ascii_lowercase().as_str() {
        "hc" => Ok(ChartMeasure::Hc),
        "ac" => Ok(ChartMeasure::Ac),
        other => Err(format!("unknown measure {other:?}; expected hc or ac")),
    }
}

#[derive(Serialize)]
struct ChartPoint {
    ga_weeks: f64,
    mean_mm: f64,
    sd_mm: f64,
}

#[derive(Serialize)]
struct Assessment {
    percentile: Option<f64>,
    mean_mm: Option<f64>,
    sd_mm: Option<f64>,
    ga_from_value: Option<f64>,
    note: Option<String>,
    curve: Vec<ChartPoint>,
}

/// Percentile of `value_mm` at `ga_weeks` and the GA whose chart mean equals
/// `value_mm`. Uses `csv` (`measure,ga_weeks,mean_mm,sd_mm`) when given,
/// otherwise the bundled synthetic charts.
#[wasm_bindgen]
pub fn chart_assessment(measure_name: &str, ga_weeks: f64, value_mm: f64, csv: Option<String>) -> Result<String, String> {
    let charts = charts(csv)?;
    let chart = charts
        .get(measure(measure_name)?)
        .ok_or_else(|| format!("no {measure_name} chart loaded"))?;
    let mut notes = Vec::new();
    let (percentile, mean_mm, sd_mm) = match chart.at(ga_weeks) {
        Ok((m, s)) => (Some(percentile_lookup(chart, ga_weeks, value_mm).map_err(err)?), Some(m), Some(s)),
        Err(e) => {
            notes.push(e.to_string());
            (None, None, None)
        }
    };
    let ga_from_value = match invert_growth_curve(chart, value_mm) {
        Ok(g) => Some(g),
        Err(e) => {
            notes.push(e.to_string());
            None
        }
    };
    let curve = chart
        .rows()
        .iter()
        .map(|r| ChartPoint { ga_weeks: r.ga_weeks, mean_mm: r.mean_mm, sd_mm: r.sd_mm })
        .collect();
    let out = Assessment {
        percentile,
        mean_mm,
        sd_mm,
        ga_from_value,
        note: (!notes.is_empty()).then(|| notes.join("; ")),
        curve,
    };
    serde_json::to_string(&out).map_err(err)
}

/// Keyframes from per-frame `[label, score]` pairs given as JSON. Returns
/// the selected frames as JSON.
#[wasm_bindgen]
pub fn keyframes(frames_json: &str, threshold: f64, window: usize, max_per_plane: usize) -> Result<String, String> {
    let frames: Vec<(String, f64)> = serde_json::from_str(frames_json).map_err(err)?;
    if !(threshold > 0.0 && threshold < 1.0) || window == 0 {
        return Err("threshold must be in (0, 1) and window at least 1".into());
    }
    let captions = CaptionTable::parse(DEFAULT_CAPTIONING).map_err(err)?;
    let picked = select_keyframes(&frames, threshold, window, max_per_plane, |l| captions.ignored(l));
    serde_json::to_string(&picked).map_err(err)
}
