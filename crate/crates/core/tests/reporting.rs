mod common;

use fetalscope::deliberation::{AgentRole, ScriptedBackend, TextBackend};
use fetalscope::evidence::{BankMode, EvidenceBank, EvidenceItem, GeneralContext};
use fetalscope::fusion::{EllipseParams, FusionRule};
use fetalscope::reporting::{
    consistency_check_and_reflect, generate_report, invert_growth_curve, normal_cdf, percentile_lookup,
    polish_report, ungrounded_numerals, ChartMeasure, ChartRow, FallbackMasks, FindingStatus, GrowthChart,
    GrowthCharts, ReflectionConfig, ReportSubject, VerifiedFinding, FLAG_OUT_OF_RANGE, FLAG_POLISH_REJECTED,
    FLAG_REFLECTION,
};
use fetalscope::synth::{synthetic_charts, synthetic_hc_mean};
use fetalscope::toolkit::{DecisionDetails, FusionTrace, Prediction, ToolEvidence};
use fetalscope::types::{GeneralTask, Mask, Measurement, TaskKind, Unit};
use fetalscope::Error;
use proptest::prelude::*;

fn chart_strategy() -> impl Strategy<Value = GrowthChart> {
    (10f64..20.0, prop::collection::vec((0.5f64..3.0, 1f64..30.0, 1f64..15.0), 2..12), 20f64..120.0).prop_map(
        |(ga0, steps, mean0)| {
            let mut rows = Vec::new();
            let (mut ga, mut mean) = (ga0, mean0);
            for (dga, dmean, sd) in steps {
                rows.push(ChartRow { ga_weeks: ga, mean_mm: mean, sd_mm: sd });
                ga += dga;
                mean += dmean;
            }
            GrowthChart::new(ChartMeasure::Hc, rows, "random").unwrap()
        },
    )
}

proptest! {
    #[test]
    fn mean_is_fiftieth_and_mean_plus_sd_is_84th(chart in chart_strategy(), t in 0f64..1.0) {
        let (lo, hi) = chart.domain();
        let ga = lo + t * (hi - lo);
        let (mean, sd) = chart.at(ga).unwrap();
        prop_assert!((percentile_lookup(&chart, ga, mean).unwrap() - 50.0).abs() <= 0.01);
        prop_assert!((percentile_lookup(&chart, ga, mean + sd).unwrap() - 84.13).abs() <= 0.01);
    }

    #[test]
    fn percentile_increases_with_value(chart in chart_strategy(), t in 0f64..1.0, z1 in -5f64..5.0, dz in 0.01f64..1.0) {
        let (lo, hi) = chart.domain();
        let ga = lo + t * (hi - lo);
        let (mean, sd) = chart.at(ga).unwrap();
        let p1 = percentile_lookup(&chart, ga, mean + z1 * sd).unwrap();
        let p2 = percentile_lookup(&chart, ga, mean + (z1 + dz) * sd).unwrap();
        prop_assert!(p2 > p1);
    }

    #[test]
    fn forward_then_invert_round_trips(chart in chart_strategy(), t in 0f64..1.0) {
        let (lo, hi) = chart.domain();
        let ga = lo + t * (hi - lo);
        let back = invert_growth_curve(&chart, chart.mean_at(ga).unwrap()).unwrap();
        prop_assert!((back - ga).abs() <= 0.05);
    }

    #[test]
    fn inversion_increases_with_value(chart in chart_strategy(), a in 0f64..1.0, b in 0f64..1.0) {
        let (vlo, vhi) = chart.value_range();
        let (x, y) = (vlo + a.min(b) * (vhi - vlo), vlo + a.max(b) * (vhi - vlo));
        prop_assume!(y - x > 1e-3);
        prop_assert!(invert_growth_curve(&chart, y).unwrap() > invert_growth_curve(&chart, x).unwrap());
    }

    #[test]
    fn cdf_matches_series(z in -6f64..6.0) {
        prop_assert!((normal_cdf(z) - common::phi_series(z)).abs() < 1e-7);
    }

    #[test]
    fn reflection_is_idempotent(
        ga in 14f64..40.0,
        z in -8f64..8.0,
        radii in prop::collection::vec(5f64..60.0, 0..3),
    ) {
        let charts = synthetic_charts();
        let chart = charts.get(ChartMeasure::Hc).unwrap();
        let (mean, sd) = chart.at(ga).unwrap();
        let value = (mean + z * sd).max(1.0);
        let findings = vec![hc_finding(value)];
        let fallbacks = FallbackMasks {
            by_task: vec![(TaskKind::Hc, radii.iter().enumerate().map(|(i, r)| (format!("t{i}"), circle(*r))).collect())],
        };
        let cfg = ReflectionConfig::default();
        let (once, flags1) = consistency_check_and_reflect(&findings, ga, &charts, &fallbacks, &cfg).unwrap();
        let (twice, flags2) = consistency_check_and_reflect(&once, ga, &charts, &fallbacks, &cfg).unwrap();
        prop_assert_eq!(&once, &twice);
        prop_assert_eq!(flags1, flags2);
    }
}

fn hc_finding(value: f64) -> VerifiedFinding {
    VerifiedFinding::unchecked(TaskKind::Hc, Measurement::new(value, Unit::Mm, "test").unwrap(), None)
}

fn circle(r: f64) -> Mask {
    EllipseParams::new(64.0, 64.0, r, r, 0.0).unwrap().rasterize(128, 128, 1.0).unwrap()
}

#[test]
fn implausible_head_is_replaced_by_plausible_fallback() {
    let charts = synthetic_charts();
    let ga = 22.0;
    let target = synthetic_hc_mean(ga);
    let r = target / (2.0 * std::f64::consts::PI);
    let fallbacks = FallbackMasks {
        by_task: vec![(TaskKind::Hc, vec![("small".into(), circle(8.0)), ("good".into(), circle(r))])],
    };
    let (out, flags) =
        consistency_check_and_reflect(&[hc_finding(2.0 * target)], ga, &charts, &fallbacks, &ReflectionConfig::default()).unwrap();
    assert_eq!(out[0].status, FindingStatus::Reflected);
    assert_eq!(out[0].replaced_by.as_deref(), Some("good"));
    assert_eq!(out[0].original_value, Some(2.0 * target));
    assert!((out[0].measurement.value - target).abs() < 3.0);
    assert_eq!(flags, vec![FLAG_REFLECTION.to_string()]);

    let (out, flags) = consistency_check_and_reflect(
        &[hc_finding(2.0 * target)],
        ga,
        &charts,
        &FallbackMasks::default(),
        &ReflectionConfig::default(),
    )
    .unwrap();
    assert_eq!(out[0].status, FindingStatus::OutOfRange);
    assert_eq!(flags, vec![FLAG_OUT_OF_RANGE.to_string()]);
}

#[test]
fn unknown_charts_and_outside_domain() {
    let mut charts = GrowthCharts::new();
    let (out, _) =
        consistency_check_and_reflect(&[hc_finding(170.0)], 20.0, &charts, &FallbackMasks::default(), &ReflectionConfig::default()).unwrap();
    assert_eq!(out[0].status, FindingStatus::NotChecked);
    charts = synthetic_charts();
    let (out, _) =
        consistency_check_and_reflect(&[hc_finding(170.0)], 45.0, &charts, &FallbackMasks::default(), &ReflectionConfig::default()).unwrap();
    assert_eq!(out[0].status, FindingStatus::OutsideChart);
}

fn measured(expert: &str, task: TaskKind, value: f64, unit: Unit) -> EvidenceItem {
    EvidenceItem::Tool(ToolEvidence {
        expert_id: expert.into(),
        task,
        prediction: Prediction::Measurement(Measurement::new(value, unit, "fused").unwrap()),
        details: DecisionDetails {
            rule: FusionRule::MedianOutlierCorrect,
            outputs: Vec::new(),
            failures: Vec::new(),
            reduced_quorum: false,
            trace: FusionTrace::MedianOutlier { median: value, values: Vec::new(), corrected: Vec::new() },
        },
    })
}

fn caption_bank() -> EvidenceBank {
    let mut bank = EvidenceBank::new("caption:t", BankMode::GeneralTask);
    bank.append(EvidenceItem::Analysis(GeneralContext {
        query_id: "t".into(),
        subtask: GeneralTask::Caption,
        source_id: "img".into(),
        frame_index: None,
        plane: None,
    }))
    .unwrap();
    bank.append(measured("hc_expert", TaskKind::Hc, 175.0, Unit::Mm)).unwrap();
    bank.append(measured("ga_expert", TaskKind::Ga, 20.1, Unit::Weeks)).unwrap();
    bank
}

#[test]
fn report_states_measurements_and_cites_them() {
    let snap = caption_bank().snapshot();
    let report = generate_report(&snap, ReportSubject::Caption).unwrap();
    assert!(report.findings.contains("175.0 mm"), "{}", report.findings);
    assert!(report.findings.contains("20.1 weeks"), "{}", report.findings);
    assert!(report.citations.contains(&2) && report.citations.contains(&3));
    assert!(ungrounded_numerals(&report, &snap).is_empty());
}

#[test]
fn empty_bank_has_no_report() {
    let snap = EvidenceBank::new("x", BankMode::GeneralTask).snapshot();
    assert!(matches!(generate_report(&snap, ReportSubject::Caption), Err(Error::EmptyBank)));
}

#[test]
fn invented_numbers_are_planted_and_caught() {
    let snap = caption_bank().snapshot();
    let mut report = generate_report(&snap, ReportSubject::Caption).unwrap();
    report.findings.push_str(" Femur length 41.7 mm.");
    assert_eq!(ungrounded_numerals(&report, &snap), vec!["41.7".to_string()]);
}

#[test]
fn polish_keeps_grounded_rewrites_and_rejects_invented_facts() {
    let snap = caption_bank().snapshot();
    let report = generate_report(&snap, ReportSubject::Caption).unwrap();
    let mut script = ScriptedBackend::new();
    script.insert(
        AgentRole::ReportWriter,
        "ok",
        "Findings:\nHead circumference measures 175.0 mm [2]; gestational age 20.1 weeks [3].\n\nImpression:\nBiometry consistent with 20.1 weeks.\n\nNote:\nEntries 2 and 3.",
    );
    script.insert(
        AgentRole::ReportWriter,
        "bad",
        "Findings:\nHead circumference 175.0 mm, femur 33.3 mm.\n\nImpression:\nNormal.\n\nNote:\nNone.",
    );
    let backend = TextBackend::Scripted(script);
    let good = polish_report(&report, &snap, &backend, "ok");
    assert!(good.findings.starts_with("Head circumference measures"));
    assert!(!good.flags.contains(&FLAG_POLISH_REJECTED.to_string()));
    let bad = polish_report(&report, &snap, &backend, "bad");
    assert_eq!(bad.findings, report.findings);
    assert!(bad.flags.contains(&FLAG_POLISH_REJECTED.to_string()));
    let missing = polish_report(&report, &snap, &backend, "absent");
    assert!(missing.flags.contains(&FLAG_POLISH_REJECTED.to_string()));
}
