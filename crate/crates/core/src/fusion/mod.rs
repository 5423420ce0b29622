//! Deterministic fusion rules and biometric geometry used by expert agents.

mod components;
mod ellipse;
mod scalar;
mod voting;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use components::{label_components, largest_component, largest_component_prompt, PromptGeometry};
pub use ellipse::{
    biometry_with_fallback, ellipse_circumference, fit_ellipse, fit_ellipse_points,
    ramanujan_perimeter, BiometryTrace, EllipseParams,
};
pub use scalar::{consistency_weighted, median, median_outlier_correct};
pub use voting::{
    agreement_fusion, label_majority_vote, mask_majority_with_fallback, pixel_majority_vote,
    LabelVote, MaskDecision, MaskFusionTrace,
};

use crate::error::Error;

/// Named fusion rule an expert applies to its tool outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionRule {
    /// Label majority with tool-priority tie-break.
    AgreementFusion,
    /// Label plurality with lexicographic tie-break.
    LabelMajorityVote,
    /// Per-pixel strict majority over masks.
    PixelMajorityVote,
    /// Coarse mask -> box/point prompt -> prompted segmenter.
    SequentialPrompt,
    /// Pixel majority with ordered fallback, reported as an area.
    MaskMajorityArea,
    MedianOutlierCorrect,
    ConsistencyWeighted,
    /// Pixel majority, then ellipse circumference with per-tool fallback.
    EllipseBiometryMajority,
    /// Sequential prompt pipeline, then ellipse circumference with fallback.
    EllipseBiometrySequential,
}

impl FusionRule {
    pub const ALL: [FusionRule; 9] = [
        FusionRule::AgreementFusion,
        FusionRule::LabelMajorityVote,
        FusionRule::PixelMajorityVote,
        FusionRule::SequentialPrompt,
        FusionRule::MaskMajorityArea,
        FusionRule::MedianOutlierCorrect,
        FusionRule::ConsistencyWeighted,
        FusionRule::EllipseBiometryMajority,
        FusionRule::EllipseBiometrySequential,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FusionRule::AgreementFusion => "agreement_fusion",
            FusionRule::LabelMajorityVote => "label_majority_vote",
            FusionRule::PixelMajorityVote => "pixel_majority_vote",
            FusionRule::SequentialPrompt => "sequential_prompt",
            FusionRule::MaskMajorityArea => "mask_majority_area",
            FusionRule::MedianOutlierCorrect => "median_outlier_correct",
            FusionRule::ConsistencyWeighted => "consistency_weighted",
            FusionRule::EllipseBiometryMajority => "ellipse_biometry_majority",
            FusionRule::EllipseBiometrySequential => "ellipse_biometry_sequential",
        }
    }
}

impl fmt::Display for FusionRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FusionRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        FusionRule::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown fusion rule {s:?}")))
    }
}

/// Tunable constants of the fusion rules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    /// Outlier threshold for median correction (AoP, degrees).
    pub delta: f64,
    /// Weight floor for consistency weighting (GA, weeks).
    pub epsilon: f64,
    /// Minimum fused area before the stomach fallback kicks in, px.
    pub min_area_px: usize,
    /// Largest acceptable mean Sampson residual of an ellipse fit, px.
    pub residual_cap: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            delta: 15.0,
            epsilon: 0.5,
            min_area_px: 64,
            residual_cap: 2.0,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if !(self.delta > 0.0 && self.epsilon > 0.0 && self.residual_cap > 0.0) {
            return Err(Error::Config(
                "fusion delta, epsilon and residual_cap must be positive".into(),
            ));
        }
        Ok(())
    }
}
