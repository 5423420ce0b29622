//! Expert agent execution: invoke the expert's tools, then fuse.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{ToolOutput, ToolRegistry};
use crate::error::{Error, Result};
use crate::fusion::{
    self, BiometryTrace, FusionConfig, FusionRule, LabelVote, MaskFusionTrace, PromptGeometry,
};
use crate::orchestration::ExpertSpec;
use crate::types::{ImageRef, Mask, Measurement, TaskKind, Unit};

/// Fused prediction of one expert.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum Prediction {
    Label(String),
    Measurement(Measurement),
    Mask(Mask),
}

impl Prediction {
    pub fn measurement(&self) -> Option<&Measurement> {
        match self {
            Prediction::Measurement(m) => Some(m),
            _ => None,
        }
    }

    pub fn label(&self) -> Option<&str> {
        match self {
            Prediction::Label(l) => Some(l),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolFailure {
    pub tool_id: String,
    pub error: String,
}

/// What the fusion rule did to reach the prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum FusionTrace {
    Agreement {
        votes: Vec<LabelVote>,
        agreement_count: usize,
        priority: Vec<String>,
        tie_broken: bool,
        /// Agreement fusion is read as majority with priority tie-break.
        interpretation: String,
    },
    LabelMajority {
        counts: BTreeMap<String, usize>,
    },
    PixelMajority {
        masks: usize,
        fused_area_px: usize,
    },
    Sequential {
        stages: Vec<String>,
        prompt: Option<PromptGeometry>,
        flag: Option<String>,
    },
    MaskMajority {
        fusion: MaskFusionTrace,
        area_px: usize,
    },
    MedianOutlier {
        median: f64,
        values: Vec<(String, f64)>,
        corrected: Vec<String>,
    },
    ConsistencyWeighted {
        median: f64,
        weights: Vec<(String, f64)>,
    },
    Biometry {
        mask_stage: Box<FusionTrace>,
        biometry: BiometryTrace,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionDetails {
    pub rule: FusionRule,
    pub outputs: Vec<ToolOutput>,
    pub failures: Vec<ToolFailure>,
    /// Fewer tools than configured contributed.
    pub reduced_quorum: bool,
    pub trace: FusionTrace,
}

/// Expert output: fused prediction plus the details behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolEvidence {
    pub expert_id: String,
    pub task: TaskKind,
    pub prediction: Prediction,
    pub details: DecisionDetails,
}

impl ToolEvidence {
    /// Per-tool masks in the expert's priority order.
    pub fn tool_masks(&self, priority: &[String]) -> Vec<(String, Mask)> {
        let mut out: Vec<(String, Mask)> = self
            .details
            .outputs
            .iter()
            .filter_map(|o| o.mask().map(|m| (o.tool_id.clone(), m.clone())))
            .collect();
        out.sort_by_key(|(id, _)| priority.iter().position(|p| p == id).unwrap_or(usize::MAX));
        out
    }
}

/// Invokes tools in order, concurrently on native targets. Results keep
/// the tool order.
fn invoke_all(
    registry: &ToolRegistry,
    tools: &[String],
    image: &ImageRef,
) -> Vec<(String, Result<ToolOutput>)> {
    let params = serde_json::Value::Null;
    #[cfg(not(target_arch = "wasm32"))]
    {
        std::thread::scope(|s| {
            let handles: Vec<_> = tools
                .iter()
                .map(|t| {
                    let params = &params;
                    s.spawn(move || (t.clone(), registry.invoke(t, image, params)))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("tool invocation thread panicked"))
                .collect()
        })
    }
    #[cfg(target_arch = "wasm32")]
    {
        tools
            .iter()
            .map(|t| (t.clone(), registry.invoke(t, image, &params)))
            .collect()
    }
}

/// Splits invocation results into successes of the expected payload kind
/// and recorded failures.
fn partition(
    results: Vec<(String, Result<ToolOutput>)>,
    accept: impl Fn(&ToolOutput) -> bool,
    expected: &str,
) -> (Vec<ToolOutput>, Vec<ToolFailure>) {
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for (tool_id, r) in results {
        match r {
            Ok(out) if accept(&out) => ok.push(out),
            Ok(_) => failed.push(ToolFailure {
                error: Error::MalformedOutput {
                    tool: tool_id.clone(),
                    reason: format!("expected {expected} output"),
                }
                .to_string(),
                tool_id,
            }),
            Err(e) => failed.push(ToolFailure {
                tool_id,
                error: e.to_string(),
            }),
        }
    }
    (ok, failed)
}

/// Outcome of the coarse-mask -> prompt -> refined-mask pipeline.
#[derive(Debug, Clone)]
pub struct SequentialOutcome {
    pub mask: Mask,
    pub trace: FusionTrace,
    pub outputs: Vec<ToolOutput>,
    pub failures: Vec<ToolFailure>,
}

/// Coarse segmenter, then a prompted segmenter fed the largest component's
/// box and centroid. An empty coarse mask or a failed prompt stage returns
/// the coarse mask with a flag.
pub fn sequential_prompt_pipeline(
    registry: &ToolRegistry,
    coarse_tool: &str,
    prompt_tool: &str,
    image: &ImageRef,
) -> Result<SequentialOutcome> {
    let coarse = registry.invoke(coarse_tool, image, &serde_json::Value::Null)?;
    let coarse_mask = coarse
        .mask()
        .cloned()
        .ok_or_else(|| Error::MalformedOutput {
            tool: coarse_tool.to_string(),
            reason: "expected mask output".into(),
        })?;
    let mut stages = vec![format!("coarse:{coarse_tool}")];
    let prompt = match fusion::largest_component_prompt(&coarse_mask) {
        Ok(p) => p,
        Err(Error::EmptyMask) => {
            return Ok(SequentialOutcome {
                mask: coarse_mask,
                trace: FusionTrace::Sequential {
                    stages,
                    prompt: None,
                    flag: Some("prompt_skipped".into()),
                },
                outputs: vec![coarse],
                failures: vec![],
            })
        }
        Err(e) => return Err(e),
    };
    let params = json!({
        "box": [prompt.x, prompt.y, prompt.w, prompt.h],
        "point": [prompt.px, prompt.py],
    });
    let refined = registry
        .invoke(prompt_tool, image, &params)
        .and_then(|out| match out.mask() {
            Some(_) => Ok(out),
            None => Err(Error::MalformedOutput {
                tool: prompt_tool.to_string(),
                reason: "expected mask output".into(),
            }),
        });
    match refined {
        Ok(out) => {
            stages.push(format!("prompt:{prompt_tool}"));
            Ok(SequentialOutcome {
                mask: out.mask().cloned().expect("checked above"),
                trace: FusionTrace::Sequential {
                    stages,
                    prompt: Some(prompt),
                    flag: None,
                },
                outputs: vec![coarse, out],
                failures: vec![],
            })
        }
        Err(e) => Ok(SequentialOutcome {
            mask: coarse_mask,
            trace: FusionTrace::Sequential {
                stages,
                prompt: Some(prompt),
                flag: Some("prompt_failed".into()),
            },
            outputs: vec![coarse],
            failures: vec![ToolFailure {
                tool_id: prompt_tool.to_string(),
                error: e.to_string(),
            }],
        }),
    }
}

fn ordered<'a>(outputs: &'a [ToolOutput], priority: &[String]) -> Vec<&'a ToolOutput> {
    let mut v: Vec<&ToolOutput> = outputs.iter().collect();
    v.sort_by_key(|o| priority.iter().position(|p| *p == o.tool_id).unwrap_or(usize::MAX));
    v
}

/// Runs one expert agent: invoke its tools, tolerate partial failure,
/// apply its fusion rule.
pub fn invoke_expert(
    registry: &ToolRegistry,
    expert: &ExpertSpec,
    image: &ImageRef,
    config: &FusionConfig,
) -> Result<ToolEvidence> {
    let priority = expert.priority_order();
    let all_failed = || Error::AllToolsFailed(expert.id.clone());

    let (prediction, outputs, failures, trace) = match expert.fusion {
        FusionRule::SequentialPrompt | FusionRule::EllipseBiometrySequential => {
            let [coarse, prompt] = expert.tools.as_slice() else {
                return Err(Error::Config(format!(
                    "expert {} needs exactly two tools (coarse, prompt) for {}",
                    expert.id, expert.fusion
                )));
            };
            let outcome = match sequential_prompt_pipeline(registry, coarse, prompt, image) {
                Ok(o) => o,
                Err(_) => return Err(all_failed()),
            };
            if expert.fusion == FusionRule::SequentialPrompt {
                (
                    Prediction::Mask(outcome.mask),
                    outcome.outputs,
                    outcome.failures,
                    outcome.trace,
                )
            } else {
                let per_tool: Vec<(String, Mask)> = ordered(&outcome.outputs, &priority)
                    .into_iter()
                    .filter_map(|o| o.mask().map(|m| (o.tool_id.clone(), m.clone())))
                    .collect();
                let (m, bt) = fusion::biometry_with_fallback(
                    Some(&outcome.mask),
                    &per_tool,
                    config.residual_cap,
                    image.spacing_mm_per_px,
                    &expert.id,
                )?;
                (
                    Prediction::Measurement(m),
                    outcome.outputs,
                    outcome.failures,
                    FusionTrace::Biometry {
                        mask_stage: Box::new(outcome.trace),
                        biometry: bt,
                    },
                )
            }
        }
        FusionRule::AgreementFusion | FusionRule::LabelMajorityVote => {
            let (ok, failed) = partition(invoke_all(registry, &expert.tools, image), |o| o.label().is_some(), "label");
            if ok.is_empty() {
                return Err(all_failed());
            }
            let votes: Vec<LabelVote> = ok
                .iter()
                .map(|o| LabelVote {
                    tool_id: o.tool_id.clone(),
                    label: o.label().unwrap().to_string(),
                    confidence: o.confidence().unwrap(),
                })
                .collect();
            let (label, trace) = if expert.fusion == FusionRule::AgreementFusion {
                let (label, count) = fusion::agreement_fusion(&votes, &priority)?;
                let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
                for v in &votes {
                    *counts.entry(&v.label).or_default() += 1;
                }
                let tie_broken = counts.values().filter(|&&c| c == count).count() > 1;
                (
                    label,
                    FusionTrace::Agreement {
                        votes,
                        agreement_count: count,
                        priority: priority.clone(),
                        tie_broken,
                        interpretation: "majority_with_priority_tiebreak".into(),
                    },
                )
            } else {
                let labels: Vec<&str> = votes.iter().map(|v| v.label.as_str()).collect();
                let label = fusion::label_majority_vote(&labels)?;
                let mut counts = BTreeMap::new();
                for l in labels {
                    *counts.entry(l.to_string()).or_default() += 1;
                }
                (label, FusionTrace::LabelMajority { counts })
            };
            (Prediction::Label(label), ok, failed, trace)
        }
        FusionRule::PixelMajorityVote | FusionRule::EllipseBiometryMajority | FusionRule::MaskMajorityArea => {
            let (ok, failed) = partition(invoke_all(registry, &expert.tools, image), |o| o.mask().is_some(), "mask");
            if ok.is_empty() {
                return Err(all_failed());
            }
            let masks: Vec<&Mask> = ok.iter().filter_map(|o| o.mask()).collect();
            match expert.fusion {
                FusionRule::PixelMajorityVote => {
                    let fused = fusion::pixel_majority_vote(&masks)?;
                    let trace = FusionTrace::PixelMajority {
                        masks: masks.len(),
                        fused_area_px: fused.area(),
                    };
                    (Prediction::Mask(fused), ok, failed, trace)
                }
                FusionRule::EllipseBiometryMajority => {
                    let fused = fusion::pixel_majority_vote(&masks)?;
                    let stage = FusionTrace::PixelMajority {
                        masks: masks.len(),
                        fused_area_px: fused.area(),
                    };
                    let per_tool: Vec<(String, Mask)> = ordered(&ok, &priority)
                        .into_iter()
                        .map(|o| (o.tool_id.clone(), o.mask().unwrap().clone()))
                        .collect();
                    let (m, bt) = fusion::biometry_with_fallback(
                        Some(&fused),
                        &per_tool,
                        config.residual_cap,
                        image.spacing_mm_per_px,
                        &expert.id,
                    )?;
                    let trace = FusionTrace::Biometry {
                        mask_stage: Box::new(stage),
                        biometry: bt,
                    };
                    (Prediction::Measurement(m), ok, failed, trace)
                }
                _ => {
                    let by_tool: Vec<(String, Mask)> = ok
                        .iter()
                        .map(|o| (o.tool_id.clone(), o.mask().unwrap().clone()))
                        .collect();
                    let (mask, ft) = fusion::mask_majority_with_fallback(&by_tool, &priority, config.min_area_px)?;
                    // mm² -> cm²
                    let area_cm2 = mask.area_mm2() / 100.0;
                    let m = Measurement::new(area_cm2, Unit::Cm2, &expert.id)?;
                    let trace = FusionTrace::MaskMajority {
                        fusion: ft,
                        area_px: mask.area(),
                    };
                    (Prediction::Measurement(m), ok, failed, trace)
                }
            }
        }
        FusionRule::MedianOutlierCorrect | FusionRule::ConsistencyWeighted => {
            let unit = expert.task.measurement_unit();
            let (ok, failed) = partition(
                invoke_all(registry, &expert.tools, image),
                |o| o.measurement().is_some_and(|m| Some(m.unit) == unit),
                "scalar",
            );
            if ok.is_empty() {
                return Err(all_failed());
            }
            let unit = unit.expect("scalar outputs carry the task unit");
            let values: Vec<(String, f64)> = ok
                .iter()
                .map(|o| (o.tool_id.clone(), o.measurement().unwrap().value))
                .collect();
            let raw: Vec<f64> = values.iter().map(|(_, v)| *v).collect();
            let med = fusion::median(&raw)?;
            let (fused, trace) = if expert.fusion == FusionRule::MedianOutlierCorrect {
                let (fused, flags) = fusion::median_outlier_correct(&raw, config.delta)?;
                let corrected = values
                    .iter()
                    .zip(flags)
                    .filter(|(_, f)| *f)
                    .map(|((id, _), _)| id.clone())
                    .collect();
                (
                    fused,
                    FusionTrace::MedianOutlier {
                        median: med,
                        values: values.clone(),
                        corrected,
                    },
                )
            } else {
                let fused = fusion::consistency_weighted(&raw, config.epsilon)?;
                let weights = values
                    .iter()
                    .map(|(id, v)| (id.clone(), 1.0 / (config.epsilon + (v - med).abs())))
                    .collect();
                (fused, FusionTrace::ConsistencyWeighted { median: med, weights })
            };
            let m = Measurement::new(fused, unit, &expert.id)?;
            (Prediction::Measurement(m), ok, failed, trace)
        }
    };

    let reduced_quorum = !failures.is_empty();
    Ok(ToolEvidence {
        expert_id: expert.id.clone(),
        task: expert.task,
        prediction,
        details: DecisionDetails {
            rule: expert.fusion,
            outputs,
            failures,
            reduced_quorum,
            trace,
        },
    })
}
