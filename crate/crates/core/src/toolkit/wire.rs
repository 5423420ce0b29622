//! JSON wire format shared by in-process fixtures and remote tool services.
//!
//! ```text
//! POST /v1/tools/{tool_id}/infer
//!   {"request_id","task","image_id","image_b64","spacing_mm_per_px","params"}
//! -> {"tool_id","task","kind","label"?,"scores"?,"mask_b64"?,"value"?,"unit"?,"latency_ms"}
//! GET /v1/health -> {"status":"ok"}
//! ```
//!
//! Rasters travel as base64 binary PGM (P5, 8-bit); a mask pixel is
//! foreground when non-zero.

use std::collections::BTreeMap;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, GrayImage, ImageEncoder, ImageFormat};
use serde::{Deserialize, Serialize};

use super::{ToolOutput, ToolPayload};
use crate::error::{Error, Result};
use crate::types::{ImageRef, Mask, Measurement, TaskKind, Unit};

pub const SCORE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferRequest {
    pub request_id: String,
    pub task: String,
    pub image_id: String,
    pub image_b64: String,
    pub spacing_mm_per_px: f64,
    pub params: serde_json::Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WireKind {
    Label,
    Mask,
    Scalar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferResponse {
    pub tool_id: String,
    pub task: String,
    pub kind: WireKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_b64: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
    pub latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
}

pub fn encode_gray(width: u32, height: u32, pixels: &[u8]) -> Result<String> {
    let img = GrayImage::from_raw(width, height, pixels.to_vec())
        .ok_or_else(|| Error::Image("buffer does not match dimensions".into()))?;
    let mut buf = Vec::new();
    PnmEncoder::new(&mut buf)
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
        .write_image(img.as_raw(), width, height, ExtendedColorType::L8)
        .map_err(|e| Error::Image(e.to_string()))?;
    Ok(STANDARD.encode(buf))
}

pub fn decode_gray(b64: &str) -> Result<GrayImage> {
    let bytes = STANDARD
        .decode(b64.trim())
        .map_err(|e| Error::Image(format!("base64: {e}")))?;
    let img = image::load_from_memory_with_format(&bytes, ImageFormat::Pnm)
        .map_err(|e| Error::Image(e.to_string()))?;
    Ok(img.to_luma8())
}

pub fn encode_mask(mask: &Mask) -> Result<String> {
    let pixels: Vec<u8> = mask.data().iter().map(|&v| if v { 255 } else { 0 }).collect();
    encode_gray(mask.width, mask.height, &pixels)
}

pub fn encode_image(image: &ImageRef) -> Result<String> {
    encode_gray(image.width, image.height, image.pixels())
}

pub fn request_for(tool_id: &str, task: TaskKind, image: &ImageRef, params: &serde_json::Value) -> Result<InferRequest> {
    Ok(InferRequest {
        request_id: format!("{tool_id}:{}", image.id),
        task: task.as_str().to_string(),
        image_id: image.id.clone(),
        image_b64: encode_image(image)?,
        spacing_mm_per_px: image.spacing_mm_per_px,
        params: if params.is_null() {
            serde_json::Value::Object(Default::default())
        } else {
            params.clone()
        },
    })
}

impl InferResponse {
    /// Wire form of a decoded output; the inverse of [`InferResponse::decode`].
    pub fn from_output(out: &ToolOutput) -> Result<Self> {
        let mut r = InferResponse {
            tool_id: out.tool_id.clone(),
            task: out.task.as_str().to_string(),
            kind: WireKind::Label,
            label: None,
            scores: None,
            mask_b64: None,
            value: None,
            unit: None,
            latency_ms: out.latency_ms,
        };
        match &out.payload {
            ToolPayload::Label { label, scores } => {
                r.label = Some(label.clone());
                r.scores = (!scores.is_empty()).then(|| scores.clone());
            }
            ToolPayload::Mask(m) => {
                r.kind = WireKind::Mask;
                r.mask_b64 = Some(encode_mask(m)?);
            }
            ToolPayload::Scalar(m) => {
                r.kind = WireKind::Scalar;
                r.value = Some(m.value);
                r.unit = Some(m.unit.as_str().to_string());
            }
        }
        Ok(r)
    }

    /// Validates the payload against the requesting tool and image.
    pub fn decode(&self, tool_id: &str, task: TaskKind, image: &ImageRef) -> Result<ToolOutput> {
        let bad = |reason: String| Error::MalformedOutput {
            tool: tool_id.to_string(),
            reason,
        };
        if self.tool_id != tool_id {
            return Err(bad(format!("tool_id {:?} does not match request", self.tool_id)));
        }
        let reported: TaskKind = self
            .task
            .parse()
            .map_err(|_| bad(format!("unknown task {:?}", self.task)))?;
        if reported != task {
            return Err(bad(format!("task {reported} does not match registered task {task}")));
        }
        if !(self.latency_ms.is_finite() && self.latency_ms >= 0.0) {
            return Err(bad("latency_ms must be a non-negative number".into()));
        }
        let payload = match self.kind {
            WireKind::Label => {
                let label = self
                    .label
                    .clone()
                    .filter(|l| !l.is_empty())
                    .ok_or_else(|| bad("label output without label".into()))?;
                let scores = self.scores.clone().unwrap_or_default();
                if !scores.is_empty() {
                    if scores.values().any(|s| !(s.is_finite() && *s >= 0.0)) {
                        return Err(bad("scores must be non-negative".into()));
                    }
                    let total: f64 = scores.values().sum();
                    if (total - 1.0).abs() > SCORE_TOLERANCE {
                        return Err(bad(format!("scores sum to {total}, expected 1")));
                    }
                }
                ToolPayload::Label { label, scores }
            }
            WireKind::Mask => {
                let b64 = self
                    .mask_b64
                    .as_deref()
                    .ok_or_else(|| bad("mask output without mask_b64".into()))?;
                let img = decode_gray(b64).map_err(|e| bad(e.to_string()))?;
                if img.dimensions() != image.dims() {
                    return Err(bad(format!(
                        "mask is {:?}, image is {:?}",
                        img.dimensions(),
                        image.dims()
                    )));
                }
                let data = img.as_raw().iter().map(|&p| p != 0).collect();
                ToolPayload::Mask(Mask::for_image(image, data).map_err(|e| bad(e.to_string()))?)
            }
            WireKind::Scalar => {
                let value = self.value.ok_or_else(|| bad("scalar output without value".into()))?;
                let unit = self
                    .unit
                    .as_deref()
                    .and_then(Unit::parse)
                    .ok_or_else(|| bad(format!("unknown unit {:?}", self.unit)))?;
                let m = Measurement::for_task(task, value, unit, tool_id).map_err(|e| bad(e.to_string()))?;
                ToolPayload::Scalar(m)
            }
        };
        Ok(ToolOutput {
            tool_id: tool_id.to_string(),
            task,
            payload,
            latency_ms: self.latency_ms,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image() -> ImageRef {
        ImageRef::new("img-001", 5, 4, (0..20).collect(), 0.2, "").unwrap()
    }

    #[test]
    fn gray_round_trip() {
        let img = image();
        let enc = encode_image(&img).unwrap();
        let dec = decode_gray(&enc).unwrap();
        assert_eq!(dec.as_raw().as_slice(), img.pixels());
    }

    #[test]
    fn rasters_are_binary_pgm() {
        let bytes = STANDARD.decode(encode_image(&image()).unwrap()).unwrap();
        assert!(bytes.starts_with(b"P5"));
        assert_eq!(&bytes[bytes.len() - 20..], &(0..20).collect::<Vec<u8>>()[..]);
    }

    #[test]
    fn mask_response_round_trip() {
        let img = image();
        let mask = Mask::from_fn(5, 4, 0.2, |x, y| x > y).unwrap();
        let out = ToolOutput {
            tool_id: "stub-head-seg".into(),
            task: TaskKind::HeadSeg,
            payload: ToolPayload::Mask(mask),
            latency_ms: 12.0,
        };
        let wire = InferResponse::from_output(&out).unwrap();
        assert_eq!(wire.decode("stub-head-seg", TaskKind::HeadSeg, &img).unwrap(), out);
    }

    #[test]
    fn scores_must_sum_to_one() {
        let img = image();
        let mut r = InferResponse {
            tool_id: "t".into(),
            task: "standard_plane".into(),
            kind: WireKind::Label,
            label: Some("head".into()),
            scores: Some(BTreeMap::from([("head".into(), 0.5), ("femur".into(), 0.3)])),
            mask_b64: None,
            value: None,
            unit: None,
            latency_ms: 1.0,
        };
        assert!(matches!(
            r.decode("t", TaskKind::StandardPlane, &img),
            Err(Error::MalformedOutput { .. })
        ));
        r.scores = Some(BTreeMap::from([("head".into(), 0.7), ("femur".into(), 0.3)]));
        assert!(r.decode("t", TaskKind::StandardPlane, &img).is_ok());
    }

    #[test]
    fn rejects_wrong_mask_dims_and_units() {
        let img = image();
        let r = InferResponse {
            tool_id: "t".into(),
            task: "head_seg".into(),
            kind: WireKind::Mask,
            label: None,
            scores: None,
            mask_b64: Some(encode_gray(3, 3, &[0; 9]).unwrap()),
            value: None,
            unit: None,
            latency_ms: 1.0,
        };
        assert!(r.decode("t", TaskKind::HeadSeg, &img).is_err());
        let s = InferResponse {
            tool_id: "t".into(),
            task: "ga".into(),
            kind: WireKind::Scalar,
            label: None,
            scores: None,
            mask_b64: None,
            value: Some(20.0),
            unit: Some("mm".into()),
            latency_ms: 1.0,
        };
        assert!(s.decode("t", TaskKind::Ga, &img).is_err());
    }

    #[test]
    fn request_layout_is_stable() {
        let req = request_for("t", TaskKind::Hc, &image(), &serde_json::Value::Null).unwrap();
        let v = serde_json::to_value(&req).unwrap();
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        assert_eq!(keys, ["image_b64", "image_id", "params", "request_id", "spacing_mm_per_px", "task"]);
        assert!(v["params"].is_object());
    }
}
