//! Chart-relative plausibility check with a reflection step.

use serde::{Deserialize, Serialize};

use super::charts::{percentile_lookup, GrowthCharts};
use crate::error::Error;
use crate::fusion::biometry_with_fallback;
use crate::types::{Mask, Measurement, TaskKind};

pub const FLAG_REFLECTION: &str = "reflection_applied";
pub const FLAG_OUT_OF_RANGE: &str = "out_of_range";
pub const FLAG_OUTSIDE_CHART: &str = "outside_chart_domain";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReflectionConfig {
    pub low_percentile: f64,
    pub high_percentile: f64,
    pub residual_cap: f64,
}

impl Default for ReflectionConfig {
    fn default() -> Self {
        Self {
            low_percentile: 0.1,
            high_percentile: 99.9,
            residual_cap: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FindingStatus {
    /// No chart applies to this task.
    NotChecked,
    Consistent,
    /// Replaced by a per-tool fallback that passed the check.
    Reflected,
    /// Still extreme after reflection; original value kept.
    OutOfRange,
    /// GA outside the chart domain.
    OutsideChart,
}

/// A measurement after the consistency check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifiedFinding {
    pub task: TaskKind,
    pub measurement: Measurement,
    pub status: FindingStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub percentile: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ga_weeks: Option<f64>,
    /// Value before reflection replaced it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub original_value: Option<f64>,
    /// Tool whose mask supplied the replacement.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replaced_by: Option<String>,
    /// Bank entry of the expert output this finding checks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_entry: Option<u64>,
}

impl VerifiedFinding {
    pub fn unchecked(task: TaskKind, measurement: Measurement, source_entry: Option<u64>) -> Self {
        Self {
            task,
            measurement,
            status: FindingStatus::NotChecked,
            percentile: None,
            ga_weeks: None,
            original_value: None,
            replaced_by: None,
            source_entry,
        }
    }
}

/// Per-tool masks that can stand in for a finding, in priority order.
#[derive(Debug, Clone, Default)]
pub struct FallbackMasks {
    pub by_task: Vec<(TaskKind, Vec<(String, Mask)>)>,
}

impl FallbackMasks {
    fn get(&self, task: TaskKind) -> &[(String, Mask)] {
        self.by_task
            .iter()
            .find(|(t, _)| *t == task)
            .map_or(&[], |(_, m)| m.as_slice())
    }
}

fn plausible(p: f64, cfg: &ReflectionConfig) -> bool {
    p >= cfg.low_percentile && p <= cfg.high_percentile
}

/// Checks every HC/AC finding against its chart at `ga`. An extreme
/// percentile triggers a retry over the per-tool masks in priority order;
/// the first plausible fallback replaces the value. Applying the check to
/// its own output changes nothing.
pub fn consistency_check_and_reflect(
    findings: &[VerifiedFinding],
    ga: f64,
    charts: &GrowthCharts,
    fallbacks: &FallbackMasks,
    cfg: &ReflectionConfig,
) -> crate::Result<(Vec<VerifiedFinding>, Vec<String>)> {
    if !ga.is_finite() {
        return Err(Error::invalid("ga estimate must be finite"));
    }
    let mut out = Vec::with_capacity(findings.len());
    let mut flags = Vec::new();
    for f in findings {
        let Some(chart) = charts.for_task(f.task) else {
            out.push(VerifiedFinding {
                status: FindingStatus::NotChecked,
                ..f.clone()
            });
            continue;
        };
        let mut v = f.clone();
        v.ga_weeks = Some(ga);
        let p = match percentile_lookup(chart, ga, f.measurement.value) {
            Ok(p) => p,
            Err(Error::OutOfDomain { .. }) => {
                v.status = FindingStatus::OutsideChart;
                v.percentile = None;
                flags.push(FLAG_OUTSIDE_CHART.to_string());
                out.push(v);
                continue;
            }
            Err(e) => return Err(e),
        };
        v.percentile = Some(p);
        if plausible(p, cfg) {
            // A value that reflection already replaced keeps its history.
            if f.status != FindingStatus::Reflected {
                v.status = FindingStatus::Consistent;
            } else {
                flags.push(FLAG_REFLECTION.to_string());
            }
            out.push(v);
            continue;
        }
        let spacing = fallbacks.get(f.task).first().map(|(_, m)| m.spacing_mm_per_px);
        let mut replaced = false;
        for (tool, mask) in fallbacks.get(f.task) {
            let Ok((m, _)) = biometry_with_fallback(
                None,
                std::slice::from_ref(&(tool.clone(), mask.clone())),
                cfg.residual_cap,
                spacing.unwrap_or(mask.spacing_mm_per_px),
                &f.measurement.provenance,
            ) else {
                continue;
            };
            let Ok(pp) = percentile_lookup(chart, ga, m.value) else {
                continue;
            };
            if plausible(pp, cfg) {
                v.original_value = Some(f.measurement.value);
                v.measurement = m;
                v.percentile = Some(pp);
                v.replaced_by = Some(tool.clone());
                v.status = FindingStatus::Reflected;
                flags.push(FLAG_REFLECTION.to_string());
                replaced = true;
                break;
            }
        }
        if !replaced {
            v.status = FindingStatus::OutOfRange;
            flags.push(FLAG_OUT_OF_RANGE.to_string());
        }
        out.push(v);
    }
    flags.sort();
    flags.dedup();
    Ok((out, flags))
}
