use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::Mask;

fn check_dims(masks: &[&Mask]) -> Result<()> {
    let Some(first) = masks.first() else {
        return Err(Error::invalid("at least one mask is required"));
    };
    if let Some(bad) = masks.iter().find(|m| m.dims() != first.dims()) {
        return Err(Error::DimensionMismatch(format!(
            "{:?} vs {:?}",
            first.dims(),
            bad.dims()
        )));
    }
    Ok(())
}

/// Per-pixel strict majority: foreground iff more than half of the masks
/// mark the pixel. Even splits resolve to background.
pub fn pixel_majority_vote(masks: &[&Mask]) -> Result<Mask> {
    check_dims(masks)?;
    let first = masks[0];
    let n = masks.len();
    let data = (0..first.data().len())
        .map(|i| {
            let votes = masks.iter().filter(|m| m.data()[i]).count();
            2 * votes > n
        })
        .collect();
    Mask::new(first.width, first.height, data, first.spacing_mm_per_px)
}

/// Which branch produced the mask returned by [`mask_majority_with_fallback`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "path", content = "tool", rename_all = "snake_case")]
pub enum MaskDecision {
    Majority,
    Fallback(String),
    FallbackLargest(String),
}

impl MaskDecision {
    pub fn label(&self) -> String {
        match self {
            MaskDecision::Majority => "majority".into(),
            MaskDecision::Fallback(t) => format!("fallback:{t}"),
            MaskDecision::FallbackLargest(_) => "fallback:largest".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskFusionTrace {
    pub fused_area_px: usize,
    pub min_area_px: usize,
    pub decision: MaskDecision,
}

/// Majority vote, then ordered fallback when the fused mask is too small
/// to be trusted. Tools absent from `fallback_order` are never preferred
/// over listed ones but can still win the largest-area branch.
pub fn mask_majority_with_fallback(
    masks: &[(String, Mask)],
    fallback_order: &[String],
    min_area_px: usize,
) -> Result<(Mask, MaskFusionTrace)> {
    let refs: Vec<&Mask> = masks.iter().map(|(_, m)| m).collect();
    let fused = pixel_majority_vote(&refs)?;
    let fused_area = fused.area();
    if fused_area >= min_area_px {
        return Ok((
            fused,
            MaskFusionTrace {
                fused_area_px: fused_area,
                min_area_px,
                decision: MaskDecision::Majority,
            },
        ));
    }
    for tool in fallback_order {
        if let Some((id, m)) = masks.iter().find(|(id, _)| id == tool) {
            if m.area() >= min_area_px {
                return Ok((
                    m.clone(),
                    MaskFusionTrace {
                        fused_area_px: fused_area,
                        min_area_px,
                        decision: MaskDecision::Fallback(id.clone()),
                    },
                ));
            }
        }
    }
    // first of the maximal-area masks
    let mut best = &masks[0];
    for cand in &masks[1..] {
        if cand.1.area() > best.1.area() {
            best = cand;
        }
    }
    Ok((
        best.1.clone(),
        MaskFusionTrace {
            fused_area_px: fused_area,
            min_area_px,
            decision: MaskDecision::FallbackLargest(best.0.clone()),
        },
    ))
}

/// A classifier vote with its confidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelVote {
    pub tool_id: String,
    pub label: String,
    pub confidence: f64,
}

/// Majority with tool-priority tie-break: among the labels tied for the
/// largest agreement count, the one predicted by the highest-priority tool
/// wins. Tools missing from `priority` rank after all listed tools, in
/// input order.
pub fn agreement_fusion(votes: &[LabelVote], priority: &[String]) -> Result<(String, usize)> {
    if votes.is_empty() {
        return Err(Error::invalid("agreement fusion needs at least one vote"));
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for v in votes {
        *counts.entry(v.label.as_str()).or_default() += 1;
    }
    let top = *counts.values().max().expect("non-empty");
    let rank = |tool: &str, idx: usize| {
        priority
            .iter()
            .position(|p| p == tool)
            .unwrap_or(priority.len() + idx)
    };
    let winner = votes
        .iter()
        .enumerate()
        .filter(|(_, v)| counts[v.label.as_str()] == top)
        .min_by_key(|(i, v)| rank(&v.tool_id, *i))
        .map(|(_, v)| v.label.clone())
        .expect("a tied label exists");
    Ok((winner, top))
}

/// Plurality label; ties go to the lexicographically smallest label.
pub fn label_majority_vote<S: AsRef<str>>(labels: &[S]) -> Result<String> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for l in labels {
        *counts.entry(l.as_ref()).or_default() += 1;
    }
    let top = counts
        .values()
        .max()
        .copied()
        .ok_or_else(|| Error::invalid("label vote needs at least one label"))?;
    // BTreeMap iterates in lexicographic order
    Ok(counts
        .into_iter()
        .find(|(_, c)| *c == top)
        .map(|(l, _)| l.to_string())
        .expect("max exists"))
}
