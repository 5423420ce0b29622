//! Growth charts, the consistency check, and report generation.

mod charts;
mod reflect;
mod report;

pub use charts::{
    invert_growth_curve, normal_cdf, percentile_lookup, ChartMeasure, ChartRow, GrowthChart, GrowthCharts,
    INVERSION_TOLERANCE_MM,
};
pub use reflect::{
    consistency_check_and_reflect, FallbackMasks, FindingStatus, ReflectionConfig, VerifiedFinding, FLAG_OUTSIDE_CHART,
    FLAG_OUT_OF_RANGE, FLAG_REFLECTION,
};
pub use report::{
    format_measurement, generate_report, numerals, polish_report, ungrounded_numerals, Report, ReportSubject,
    FLAG_EXPERT_FAILURE, FLAG_GA_DISCREPANCY, FLAG_POLISH_REJECTED,
};
