//! Domain types shared by every stage of the pipeline.
//!
//! All types are immutable after construction; constructors validate the
//! invariants so downstream code can rely on them.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// One lettered answer option, e.g. `(B) Trans-thalamic`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptionItem {
    pub key: String,
    pub text: String,
}

impl OptionItem {
    pub fn new(key: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            key: key.into(),
            text: text.into(),
        }
    }
}

/// Letter key for the option at `index` (0 -> "A").
pub fn option_key(index: usize) -> String {
    assert!(index < 26, "at most 26 options");
    char::from(b'A' + index as u8).to_string()
}

/// Builds options keyed A, B, C... from plain texts.
pub fn options_from_texts<S: AsRef<str>>(texts: &[S]) -> Vec<OptionItem> {
    texts
        .iter()
        .enumerate()
        .map(|(i, t)| OptionItem::new(option_key(i), t.as_ref()))
        .collect()
}

pub(crate) fn validate_options(options: &[OptionItem]) -> Result<()> {
    for (i, opt) in options.iter().enumerate() {
        if i >= 26 || opt.key != option_key(i) {
            return Err(Error::invalid(format!(
                "option keys must be contiguous from A; found {:?} at position {i}",
                opt.key
            )));
        }
    }
    Ok(())
}

/// A user request: free text, optional candidate options, and media.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub options: Vec<OptionItem>,
    #[serde(default)]
    pub attachments: Vec<Attachment>,
}

impl Query {
    pub fn new(
        id: impl Into<String>,
        text: impl Into<String>,
        options: Vec<OptionItem>,
        attachments: Vec<Attachment>,
    ) -> Result<Self> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(Error::invalid("query text is empty"));
        }
        validate_options(&options)?;
        Ok(Self {
            id: id.into(),
            text,
            options,
            attachments,
        })
    }

    pub fn image(&self) -> Option<&ImageRef> {
        self.attachments.iter().find_map(|a| match a {
            Attachment::Image(img) => Some(img),
            Attachment::Video(_) => None,
        })
    }

    pub fn video(&self) -> Option<&VideoRef> {
        self.attachments.iter().find_map(|a| match a {
            Attachment::Video(v) => Some(v),
            Attachment::Image(_) => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Attachment {
    Image(ImageRef),
    Video(VideoRef),
}

/// An 8-bit grayscale raster with isotropic pixel spacing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRef {
    pub id: String,
    pub width: u32,
    pub height: u32,
    #[serde(with = "b64_bytes")]
    pixels: Vec<u8>,
    pub spacing_mm_per_px: f64,
    #[serde(default)]
    pub source: String,
}

impl ImageRef {
    pub fn new(
        id: impl Into<String>,
        width: u32,
        height: u32,
        pixels: Vec<u8>,
        spacing_mm_per_px: f64,
        source: impl Into<String>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("image dimensions must be at least 1x1"));
        }
        if pixels.len() != (width as usize) * (height as usize) {
            return Err(Error::invalid(format!(
                "image buffer holds {} bytes, expected {}",
                pixels.len(),
                width * height
            )));
        }
        if !(spacing_mm_per_px.is_finite() && spacing_mm_per_px > 0.0) {
            return Err(Error::invalid("pixel spacing must be positive"));
        }
        Ok(Self {
            id: id.into(),
            width,
            height,
            pixels,
            spacing_mm_per_px,
            source: source.into(),
        })
    }

    /// Uniform black image; useful where only the id and geometry matter.
    pub fn blank(id: impl Into<String>, width: u32, height: u32, spacing: f64) -> Result<Self> {
        Self::new(
            id,
            width,
            height,
            vec![0; (width * height) as usize],
            spacing,
            "",
        )
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }
}

/// An ordered frame sequence sharing one geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoRef {
    pub id: String,
    frames: Vec<ImageRef>,
    pub frame_rate: f64,
}

impl VideoRef {
    pub fn new(id: impl Into<String>, frames: Vec<ImageRef>, frame_rate: f64) -> Result<Self> {
        let Some(first) = frames.first() else {
            return Err(Error::EmptyVideo);
        };
        let dims = first.dims();
        if frames.iter().any(|f| f.dims() != dims) {
            return Err(Error::invalid("video frames differ in dimensions"));
        }
        if !(frame_rate.is_finite() && frame_rate > 0.0) {
            return Err(Error::invalid("frame rate must be positive"));
        }
        Ok(Self {
            id: id.into(),
            frames,
            frame_rate,
        })
    }

    pub fn frames(&self) -> &[ImageRef] {
        &self.frames
    }
}

/// Binary segmentation raster, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub width: u32,
    pub height: u32,
    data: Vec<bool>,
    pub spacing_mm_per_px: f64,
}

impl Mask {
    pub fn new(width: u32, height: u32, data: Vec<bool>, spacing_mm_per_px: f64) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("mask dimensions must be at least 1x1"));
        }
        if data.len() != (width as usize) * (height as usize) {
            return Err(Error::DimensionMismatch(format!(
                "mask buffer holds {} pixels, expected {}x{}",
                data.len(),
                width,
                height
            )));
        }
        if !(spacing_mm_per_px.is_finite() && spacing_mm_per_px > 0.0) {
            return Err(Error::invalid("pixel spacing must be positive"));
        }
        Ok(Self {
            width,
            height,
            data,
            spacing_mm_per_px,
        })
    }

    /// Mask bound to a source image; dimensions and spacing must agree.
    pub fn for_image(image: &ImageRef, data: Vec<bool>) -> Result<Self> {
        Self::new(image.width, image.height, data, image.spacing_mm_per_px)
    }

    pub fn empty(width: u32, height: u32, spacing_mm_per_px: f64) -> Result<Self> {
        Self::new(
            width,
            height,
            vec![false; (width as usize) * (height as usize)],
            spacing_mm_per_px,
        )
    }

    pub fn from_fn(
        width: u32,
        height: u32,
        spacing_mm_per_px: f64,
        f: impl Fn(u32, u32) -> bool,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity((width as usize) * (height as usize));
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data, spacing_mm_per_px)
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.data[(y as usize) * (self.width as usize) + x as usize]
    }

    /// Foreground pixel count.
    pub fn area(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn area_mm2(&self) -> f64 {
        self.area() as f64 * self.spacing_mm_per_px * self.spacing_mm_per_px
    }

    /// Row-major bits, most significant bit first within each byte.
    pub fn to_packed_bits(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.data.len().div_ceil(8)];
        for (i, &v) in self.data.iter().enumerate() {
            if v {
                out[i / 8] |= 0x80 >> (i % 8);
            }
        }
        out
    }

    pub fn from_packed_bits(width: u32, height: u32, bits: &[u8], spacing: f64) -> Result<Self> {
        let n = (width as usize) * (height as usize);
        if bits.len() != n.div_ceil(8) {
            return Err(Error::DimensionMismatch(format!(
                "packed mask has {} bytes, expected {}",
                bits.len(),
                n.div_ceil(8)
            )));
        }
        let data = (0..n).map(|i| bits[i / 8] & (0x80 >> (i % 8)) != 0).collect();
        Self::new(width, height, data, spacing)
    }
}

#[derive(Serialize, Deserialize)]
struct MaskRepr {
    width: u32,
    height: u32,
    spacing_mm_per_px: f64,
    #[serde(with = "b64_bytes")]
    bits: Vec<u8>,
}

impl Serialize for Mask {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        MaskRepr {
            width: self.width,
            height: self.height,
            spacing_mm_per_px: self.spacing_mm_per_px,
            bits: self.to_packed_bits(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Mask {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = MaskRepr::deserialize(d)?;
        Mask::from_packed_bits(r.width, r.height, &r.bits, r.spacing_mm_per_px)
            .map_err(serde::de::Error::custom)
    }
}

/// Clinical task handled by one expert dispatch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    StandardPlane,
    BrainSubplane,
    HeadSeg,
    AbdomenSeg,
    StomachSeg,
    Aop,
    Ga,
    Hc,
    Ac,
}

impl TaskKind {
    pub const ALL: [TaskKind; 9] = [
        TaskKind::StandardPlane,
        TaskKind::BrainSubplane,
        TaskKind::HeadSeg,
        TaskKind::AbdomenSeg,
        TaskKind::StomachSeg,
        TaskKind::Aop,
        TaskKind::Ga,
        TaskKind::Hc,
        TaskKind::Ac,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::StandardPlane => "standard_plane",
            TaskKind::BrainSubplane => "brain_subplane",
            TaskKind::HeadSeg => "head_seg",
            TaskKind::AbdomenSeg => "abdomen_seg",
            TaskKind::StomachSeg => "stomach_seg",
            TaskKind::Aop => "aop",
            TaskKind::Ga => "ga",
            TaskKind::Hc => "hc",
            TaskKind::Ac => "ac",
        }
    }

    /// Unit of the scalar this task reports, if it reports one.
    pub fn measurement_unit(self) -> Option<Unit> {
        match self {
            TaskKind::Hc | TaskKind::Ac => Some(Unit::Mm),
            TaskKind::Aop => Some(Unit::Degrees),
            TaskKind::StomachSeg => Some(Unit::Cm2),
            TaskKind::Ga => Some(Unit::Weeks),
            _ => None,
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            TaskKind::StandardPlane => "Standard plane",
            TaskKind::BrainSubplane => "Brain sub-plane",
            TaskKind::HeadSeg => "Head segmentation",
            TaskKind::AbdomenSeg => "Abdomen segmentation",
            TaskKind::StomachSeg => "Stomach area",
            TaskKind::Aop => "Angle of progression",
            TaskKind::Ga => "Gestational age",
            TaskKind::Hc => "Head circumference",
            TaskKind::Ac => "Abdominal circumference",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TaskKind::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown task kind {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneralTask {
    Caption,
    VideoSummary,
}

/// Coordinator routing outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "route", content = "subtask", rename_all = "snake_case")]
pub enum QueryRoute {
    Specific,
    General(GeneralTask),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Unit {
    Mm,
    Degrees,
    Cm2,
    Weeks,
}

impl Unit {
    pub fn as_str(self) -> &'static str {
        match self {
            Unit::Mm => "mm",
            Unit::Degrees => "degrees",
            Unit::Cm2 => "cm2",
            Unit::Weeks => "weeks",
        }
    }

    /// Human-facing symbol used in option texts and reports.
    pub fn symbol(self) -> &'static str {
        match self {
            Unit::Mm => "mm",
            Unit::Degrees => "°",
            Unit::Cm2 => "cm²",
            Unit::Weeks => "weeks",
        }
    }

    pub fn parse(s: &str) -> Option<Unit> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mm" => Some(Unit::Mm),
            "degrees" | "degree" | "deg" | "°" => Some(Unit::Degrees),
            "cm2" | "cm²" | "cm^2" => Some(Unit::Cm2),
            "weeks" | "week" | "wk" | "wks" => Some(Unit::Weeks),
            _ => None,
        }
    }
}

impl fmt::Display for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A unit-carrying biometric value with its origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub value: f64,
    pub unit: Unit,
    pub provenance: String,
}

impl Measurement {
    pub fn new(value: f64, unit: Unit, provenance: impl Into<String>) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::invalid("measurement value must be finite"));
        }
        Ok(Self {
            value,
            unit,
            provenance: provenance.into(),
        })
    }

    /// Checks the unit against the task's declared unit.
    pub fn for_task(
        task: TaskKind,
        value: f64,
        unit: Unit,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        match task.measurement_unit() {
            Some(u) if u == unit => Self::new(value, unit, provenance),
            Some(u) => Err(Error::invalid(format!(
                "task {task} reports {u}, got {unit}"
            ))),
            None => Err(Error::invalid(format!("task {task} has no scalar output"))),
        }
    }
}

pub(crate) mod b64_bytes {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        STANDARD.decode(s).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn option_keys_must_be_contiguous() {
        let ok = options_from_texts(&["Yes", "No"]);
        assert!(Query::new("q", "Is it?", ok, vec![]).is_ok());
        let bad = vec![OptionItem::new("A", "x"), OptionItem::new("C", "y")];
        assert!(Query::new("q", "Is it?", bad, vec![]).is_err());
        assert!(Query::new("q", "   ", vec![], vec![]).is_err());
    }

    #[test]
    fn image_invariants() {
        assert!(ImageRef::new("i", 0, 1, vec![], 0.1, "").is_err());
        assert!(ImageRef::new("i", 2, 2, vec![0; 3], 0.1, "").is_err());
        assert!(ImageRef::new("i", 2, 2, vec![0; 4], 0.0, "").is_err());
        assert!(ImageRef::new("i", 2, 2, vec![0; 4], 0.1, "").is_ok());
    }

    #[test]
    fn mask_must_match_source_image() {
        let img = ImageRef::blank("i", 4, 3, 0.2).unwrap();
        assert!(Mask::for_image(&img, vec![false; 12]).is_ok());
        assert!(matches!(
            Mask::for_image(&img, vec![false; 11]),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn video_frames_share_dims() {
        let a = ImageRef::blank("a", 4, 4, 0.2).unwrap();
        let b = ImageRef::blank("b", 5, 4, 0.2).unwrap();
        assert!(matches!(VideoRef::new("v", vec![], 25.0), Err(Error::EmptyVideo)));
        assert!(VideoRef::new("v", vec![a.clone(), b], 25.0).is_err());
        assert!(VideoRef::new("v", vec![a.clone(), a], 25.0).is_ok());
    }

    #[test]
    fn measurement_unit_follows_task() {
        assert!(Measurement::for_task(TaskKind::Hc, 170.0, Unit::Mm, "t").is_ok());
        assert!(Measurement::for_task(TaskKind::Hc, 170.0, Unit::Weeks, "t").is_err());
        assert!(Measurement::for_task(TaskKind::HeadSeg, 1.0, Unit::Mm, "t").is_err());
        assert!(Measurement::new(f64::NAN, Unit::Mm, "t").is_err());
    }

    #[test]
    fn task_kind_names_round_trip() {
        for t in TaskKind::ALL {
            assert_eq!(t.as_str().parse::<TaskKind>().unwrap(), t);
            let json = serde_json::to_string(&t).unwrap();
            assert_eq!(json, format!("\"{}\"", t.as_str()));
        }
    }

    #[test]
    fn serialization_is_byte_stable() {
        let img = ImageRef::new("img-1", 3, 2, vec![0, 10, 20, 30, 40, 250], 0.15, "x.pgm")
            .unwrap();
        let mask = Mask::from_fn(7, 5, 0.15, |x, y| (x + y) % 3 == 0).unwrap();
        let q = Query::new(
            "q1",
            "What is it?",
            options_from_texts(&["Yes", "No"]),
            vec![Attachment::Image(img)],
        )
        .unwrap();
        let m = Measurement::new(301.7, Unit::Mm, "fusion").unwrap();
        let route = QueryRoute::General(GeneralTask::Caption);

        fn check<T: Serialize + for<'de> Deserialize<'de>>(v: &T) {
            let a = serde_json::to_string(v).unwrap();
            let back: T = serde_json::from_str(&a).unwrap();
            assert_eq!(a, serde_json::to_string(&back).unwrap());
        }
        check(&mask);
        check(&q);
        check(&m);
        check(&route);
    }
}
