//! Findings / Impression / Note rendering and the numeral grounding check.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::reflect::{FindingStatus, VerifiedFinding};
use crate::arbitration::{DecisionRule, FinalDecision};
use crate::deliberation::{AgentRole, TextBackend};
use crate::error::{Error, Result};
use crate::evidence::{BankEntry, BankSnapshot, EvidenceItem};
use crate::toolkit::{FusionTrace, Prediction, ToolEvidence};
use crate::types::{Measurement, TaskKind, Unit};
use crate::workflows::KeyframeSet;

pub const FLAG_GA_DISCREPANCY: &str = "ga_discrepancy";
pub const FLAG_EXPERT_FAILURE: &str = "expert_failure";
pub const FLAG_POLISH_REJECTED: &str = "polish_rejected";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub findings: String,
    pub impression: String,
    pub note: String,
    pub citations: Vec<u64>,
    pub flags: Vec<String>,
}

impl Report {
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "Findings:\n{}\n\nImpression:\n{}\n\nNote:\n{}\n",
            self.findings, self.impression, self.note
        );
        if !self.flags.is_empty() {
            s.push_str(&format!("\nFlags: {}\n", self.flags.join(", ")));
        }
        s
    }
}

/// What the report concludes about.
#[derive(Debug, Clone, Copy)]
pub enum ReportSubject<'a> {
    Decision(&'a FinalDecision),
    Caption,
    VideoSummary,
}

fn decimals(unit: Unit) -> usize {
    match unit {
        Unit::Cm2 => 2,
        _ => 1,
    }
}

pub fn format_measurement(m: &Measurement) -> String {
    let d = decimals(m.unit);
    match m.unit {
        Unit::Degrees => format!("{:.d$}°", m.value),
        u => format!("{:.d$} {}", m.value, u.symbol()),
    }
}

fn short_name(task: TaskKind) -> &'static str {
    match task {
        TaskKind::Hc => "HC",
        TaskKind::Ac => "AC",
        TaskKind::Ga => "GA",
        TaskKind::Aop => "AoP",
        t => t.display_name(),
    }
}

fn trace_area(trace: &FusionTrace) -> Option<usize> {
    match trace {
        FusionTrace::PixelMajority { fused_area_px, .. } => Some(*fused_area_px),
        FusionTrace::MaskMajority { area_px, .. } => Some(*area_px),
        _ => None,
    }
}

fn describe_tool(t: &ToolEvidence) -> String {
    match &t.prediction {
        Prediction::Label(l) => format!("{}: {}", t.task.display_name(), l),
        Prediction::Measurement(m) => format!("{}: {}", t.task.display_name(), format_measurement(m)),
        Prediction::Mask(_) => match trace_area(&t.details.trace) {
            Some(a) => format!("{}: segmented region of {} px", t.task.display_name(), a),
            None => format!("{}: segmented region", t.task.display_name()),
        },
    }
}

fn describe_finding(f: &VerifiedFinding) -> String {
    let mut s = format!("{} {}", short_name(f.task), format_measurement(&f.measurement));
    match f.status {
        FindingStatus::Consistent | FindingStatus::Reflected | FindingStatus::OutOfRange => {
            if let (Some(p), Some(ga)) = (f.percentile, f.ga_weeks) {
                s.push_str(&format!(", percentile {p:.1} at {ga:.1} weeks"));
            }
        }
        FindingStatus::OutsideChart => {
            if let Some(ga) = f.ga_weeks {
                s.push_str(&format!(", no chart reference at {ga:.1} weeks"));
            }
        }
        FindingStatus::NotChecked => {}
    }
    match f.status {
        FindingStatus::Reflected => {
            if let (Some(orig), Some(tool)) = (f.original_value, &f.replaced_by) {
                let d = decimals(f.measurement.unit);
                s.push_str(&format!(
                    " (reflected: replaced {orig:.d$} {} with the {tool} estimate)",
                    f.measurement.unit.symbol()
                ));
            }
        }
        FindingStatus::OutOfRange => s.push_str(" (outside the expected range after reflection)"),
        _ => {}
    }
    s
}

/// Mutable state while rendering: cited ids in first-use order.
#[derive(Default)]
struct Cites {
    ids: BTreeSet<u64>,
}

impl Cites {
    fn cite(&mut self, id: u64) -> u64 {
        self.ids.insert(id);
        id
    }
}

fn join_ids(ids: &[u64]) -> String {
    ids.iter().map(u64::to_string).collect::<Vec<_>>().join(", ")
}

fn plane_label(snap: &BankSnapshot) -> Option<(u64, String)> {
    snap.entries().into_iter().find_map(|e| match &e.item {
        EvidenceItem::Tool(t) if t.task == TaskKind::StandardPlane => t.prediction.label().map(|l| (e.id, l.to_string())),
        _ => None,
    })
}

fn collect_flags(snap: &BankSnapshot) -> Vec<String> {
    let mut flags = BTreeSet::new();
    for e in snap.entries() {
        match &e.item {
            EvidenceItem::Finding(f) => match f.status {
                FindingStatus::Reflected => {
                    flags.insert(super::reflect::FLAG_REFLECTION.to_string());
                }
                FindingStatus::OutOfRange => {
                    flags.insert(super::reflect::FLAG_OUT_OF_RANGE.to_string());
                }
                FindingStatus::OutsideChart => {
                    flags.insert(super::reflect::FLAG_OUTSIDE_CHART.to_string());
                }
                _ => {}
            },
            EvidenceItem::GaCrossCheck(g) if g.discrepancy => {
                flags.insert(FLAG_GA_DISCREPANCY.to_string());
            }
            EvidenceItem::ExpertFailure(_) => {
                flags.insert(FLAG_EXPERT_FAILURE.to_string());
            }
            _ => {}
        }
    }
    flags.into_iter().collect()
}

fn common_note(snap: &BankSnapshot, c: &mut Cites, note: &mut Vec<String>) {
    for e in snap.entries() {
        match &e.item {
            EvidenceItem::Tool(t) => {
                let id = c.cite(e.id);
                let mut line = format!("Entry {id}: {} applied {}", t.expert_id, t.details.rule);
                if let FusionTrace::Biometry { biometry, .. } = &t.details.trace {
                    line.push_str(&format!(", ellipse from {}", biometry.source));
                }
                if !t.details.failures.is_empty() {
                    let failed: Vec<&str> = t.details.failures.iter().map(|f| f.tool_id.as_str()).collect();
                    line.push_str(&format!("; failed tools: {}", failed.join(", ")));
                }
                note.push(format!("{line}."));
            }
            EvidenceItem::ExpertFailure(f) => {
                let id = c.cite(e.id);
                note.push(format!("Entry {id}: {} failed: {}.", f.expert_id, f.error));
            }
            _ => {}
        }
    }
    let snippets: Vec<(u64, &str)> = snap
        .rag
        .iter()
        .filter_map(|e| match &e.item {
            EvidenceItem::Snippet(s) => Some((e.id, s.doc_id.as_str())),
            _ => None,
        })
        .collect();
    if !snippets.is_empty() {
        let ids: Vec<u64> = snippets.iter().map(|s| c.cite(s.0)).collect();
        let mut docs: Vec<&str> = snippets.iter().map(|s| s.1).collect();
        docs.dedup();
        note.push(format!("Reference snippets: entries {} from {}.", join_ids(&ids), docs.join(", ")));
    }
}

fn decision_report(snap: &BankSnapshot, d: &FinalDecision, c: &mut Cites) -> (Vec<String>, String, Vec<String>) {
    let mut findings = Vec::new();
    for e in snap.entries() {
        match &e.item {
            EvidenceItem::Tool(t) => {
                findings.push(format!("{} [{}].", describe_tool(t), c.cite(e.id)));
            }
            EvidenceItem::Finding(f) => findings.push(format!("{} [{}].", describe_finding(f), c.cite(e.id))),
            _ => {}
        }
    }
    if findings.is_empty() {
        findings.push("No tool evidence was available; the decision rests on the voters.".into());
    }

    let context = snap.context.iter().find_map(|e| match &e.item {
        EvidenceItem::Context(q) => Some((e.id, q)),
        _ => None,
    });
    let impression = match context.and_then(|(id, q)| q.options.iter().find(|o| o.key == d.key).map(|o| (id, o))) {
        Some((id, o)) => {
            c.cite(id);
            format!("Answer ({}) {}.", o.key, o.text)
        }
        None => format!("Answer ({}).", d.key),
    };

    let mut note = Vec::new();
    let j = &d.justification;
    if !j.vote_tally.is_empty() {
        for e in &snap.votes {
            c.cite(e.id);
        }
        let mut tally: Vec<(&String, &usize)> = j.vote_tally.iter().collect();
        tally.sort_by(|a, b| b.1.cmp(a.1).then(a.0.cmp(b.0)));
        let parts: Vec<String> = tally.iter().map(|(k, n)| format!("{k} {n}")).collect();
        let dash: Vec<String> = tally.iter().map(|(_, n)| n.to_string()).collect();
        note.push(format!("Votes: {} ({}).", parts.join(", "), dash.join("–")));
    }
    let abstained: Vec<String> = snap
        .votes
        .iter()
        .filter_map(|e| match &e.item {
            EvidenceItem::Abstention(a) => {
                c.cite(e.id);
                Some(a.profile.to_string())
            }
            _ => None,
        })
        .collect();
    if !abstained.is_empty() {
        note.push(format!("Abstained: {}.", abstained.join(", ")));
    }
    let rule = match j.rule {
        DecisionRule::MeasurementInterval => "measurement interval",
        DecisionRule::WeightedPlurality => "weighted plurality of votes and tool label",
        DecisionRule::ToolBackedTie => "tie resolved in favour of the tool-backed option",
        DecisionRule::VotePlurality => "vote plurality",
        DecisionRule::Llm => "arbiter model",
    };
    note.push(format!("Decision rule: {rule}."));
    if let Some(m) = &j.measurement {
        let v = Measurement::new(m.value, m.unit, "").map(|x| format_measurement(&x)).unwrap_or_default();
        note.push(format!(
            "Measurement {v} from entry {} falls in option {}.",
            c.cite(m.entry_id),
            m.key
        ));
    }
    for l in &j.tool_labels {
        note.push(format!(
            "Tool label {} from entry {} supports option {}.",
            l.label,
            c.cite(l.entry_id),
            l.key
        ));
    }
    if let Some(reason) = &j.llm_fallback {
        note.push(format!("Arbiter model not used: {reason}."));
    }
    for id in &j.citations {
        c.cite(*id);
    }
    common_note(snap, c, &mut note);
    (findings, impression, note)
}

fn caption_report(snap: &BankSnapshot, c: &mut Cites) -> (Vec<String>, String, Vec<String>) {
    let mut findings = Vec::new();
    let mut summary = Vec::new();
    if let Some(e) = snap.context.first() {
        c.cite(e.id);
    }
    let plane = plane_label(snap);
    for e in snap.entries() {
        match &e.item {
            EvidenceItem::Tool(t) => {
                let checked = snap.tools.iter().any(|x| matches!(&x.item, EvidenceItem::Finding(f) if f.source_entry == Some(e.id)));
                if !checked {
                    findings.push(format!("{} [{}].", describe_tool(t), c.cite(e.id)));
                }
                if let (Prediction::Measurement(m), false) = (&t.prediction, checked) {
                    summary.push(format!("{} {}", short_name(t.task), format_measurement(m)));
                }
            }
            EvidenceItem::Finding(f) => {
                findings.push(format!("{} [{}].", describe_finding(f), c.cite(e.id)));
                if let Some(src) = f.source_entry {
                    c.cite(src);
                }
                summary.push(format!("{} {}", short_name(f.task), format_measurement(&f.measurement)));
            }
            _ => {}
        }
    }
    let impression = match &plane {
        Some((id, label)) => {
            c.cite(*id);
            if summary.is_empty() {
                format!("Fetal {label} plane.")
            } else {
                format!("Fetal {label} plane with {}.", summary.join(", "))
            }
        }
        None => "Plane not identified.".to_string(),
    };
    let mut note = Vec::new();
    common_note(snap, c, &mut note);
    (findings, impression, note)
}

fn video_report(snap: &BankSnapshot, c: &mut Cites) -> (Vec<String>, String, Vec<String>) {
    if let Some(e) = snap.context.first() {
        if matches!(e.item, EvidenceItem::Analysis(_)) {
            c.cite(e.id);
        }
    }
    let keyframes: Option<(u64, &KeyframeSet)> = snap.tools.iter().find_map(|e| match &e.item {
        EvidenceItem::Keyframes(k) => Some((e.id, k)),
        _ => None,
    });
    // Group entries by the frame their analysis entry announced.
    let mut per_frame: BTreeMap<usize, Vec<&BankEntry>> = BTreeMap::new();
    let mut frame_entry: BTreeMap<usize, u64> = BTreeMap::new();
    let mut current = None;
    for e in snap.entries() {
        match &e.item {
            EvidenceItem::Analysis(a) => {
                current = a.frame_index;
                if let Some(f) = a.frame_index {
                    frame_entry.insert(f, e.id);
                }
            }
            EvidenceItem::Tool(_) | EvidenceItem::Finding(_) | EvidenceItem::ExpertFailure(_) => {
                if let Some(f) = current {
                    per_frame.entry(f).or_default().push(e);
                }
            }
            _ => {}
        }
    }

    let mut findings = Vec::new();
    let mut planes = Vec::new();
    if let Some((kid, ks)) = keyframes {
        c.cite(kid);
        let mut by_plane: BTreeMap<&str, Vec<(usize, f64)>> = BTreeMap::new();
        for k in &ks.frames {
            by_plane.entry(k.label.as_str()).or_default().push((k.frame_index, k.score));
        }
        // Planes in order of their first keyframe.
        let mut order: Vec<(&str, usize)> = by_plane
            .iter()
            .map(|(p, fs)| (*p, fs.iter().map(|f| f.0).min().unwrap()))
            .collect();
        order.sort_by_key(|o| o.1);
        for (plane, _) in order {
            let mut frames = by_plane[plane].clone();
            frames.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            let (best, score) = frames[0];
            planes.push(plane.to_string());
            let mut line = format!("{plane} plane, frame {best} (score {score:.2})");
            if let Some(id) = frame_entry.get(&best) {
                c.cite(*id);
            }
            let mut parts = Vec::new();
            for e in per_frame.get(&best).map(Vec::as_slice).unwrap_or(&[]) {
                match &e.item {
                    EvidenceItem::Tool(t) if t.task != TaskKind::StandardPlane => {
                        let checked = per_frame[&best]
                            .iter()
                            .any(|x| matches!(&x.item, EvidenceItem::Finding(f) if f.source_entry == Some(e.id)));
                        if !checked {
                            parts.push(format!("{} [{}]", describe_tool(t), c.cite(e.id)));
                        }
                    }
                    EvidenceItem::Tool(_) => {
                        c.cite(e.id);
                    }
                    EvidenceItem::Finding(f) => {
                        if let Some(src) = f.source_entry {
                            c.cite(src);
                        }
                        parts.push(format!("{} [{}]", describe_finding(f), c.cite(e.id)));
                    }
                    EvidenceItem::ExpertFailure(f) => {
                        parts.push(format!("{} unavailable [{}]", f.task.display_name(), c.cite(e.id)));
                    }
                    _ => {}
                }
            }
            if !parts.is_empty() {
                line.push_str(": ");
                line.push_str(&parts.join("; "));
            }
            if frames.len() > 1 {
                let rest: Vec<String> = frames[1..].iter().map(|f| f.0.to_string()).collect();
                line.push_str(&format!(". Also seen in frames {}", rest.join(", ")));
            }
            findings.push(format!("{line}."));
        }
    }
    if findings.is_empty() {
        findings.push("No keyframe reached the plane-score threshold.".into());
    }

    let mut impression = if planes.is_empty() {
        "No standard plane was identified in the sequence.".to_string()
    } else {
        format!("Keyframes cover the {} planes.", planes.join(", "))
    };
    for e in &snap.tools {
        if let EvidenceItem::GaCrossCheck(g) = &e.item {
            let id = c.cite(e.id);
            if g.discrepancy {
                impression.push_str(&format!(
                    " Ultrasound GA {:.1} weeks differs from the LMP estimate of {:.1} weeks by {:.1} weeks [{id}].",
                    g.ga_us_weeks, g.ga_lmp_weeks, g.difference_weeks
                ));
            } else {
                impression.push_str(&format!(
                    " Ultrasound GA {:.1} weeks agrees with the LMP estimate of {:.1} weeks [{id}].",
                    g.ga_us_weeks, g.ga_lmp_weeks
                ));
            }
        }
    }
    let mut note = Vec::new();
    if let Some((kid, ks)) = keyframes {
        note.push(format!(
            "Entry {kid}: keyframes scored by {} at threshold {:.2}, window {}.",
            ks.scorer, ks.threshold, ks.window
        ));
    }
    common_note(snap, c, &mut note);
    (findings, impression, note)
}

/// Template report over a bank snapshot.
pub fn generate_report(snap: &BankSnapshot, subject: ReportSubject) -> Result<Report> {
    if snap.is_empty() {
        return Err(Error::EmptyBank);
    }
    let mut c = Cites::default();
    let (findings, impression, mut note) = match subject {
        ReportSubject::Decision(d) => decision_report(snap, d, &mut c),
        ReportSubject::Caption => caption_report(snap, &mut c),
        ReportSubject::VideoSummary => video_report(snap, &mut c),
    };
    let citations: Vec<u64> = c.ids.into_iter().filter(|id| snap.get(*id).is_some()).collect();
    note.push(format!("Cited entries: {}.", join_ids(&citations)));
    Ok(Report {
        findings: findings.join("\n"),
        impression,
        note: note.join("\n"),
        citations,
        flags: collect_flags(snap),
    })
}

fn numeral_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\b\d+(?:\.\d+)?\b").unwrap())
}

/// Numerals of a text, in order.
pub fn numerals(text: &str) -> Vec<String> {
    numeral_re().find_iter(text).map(|m| m.as_str().to_string()).collect()
}

const SKIPPED_FIELDS: [&str; 4] = ["bits", "data", "mask_b64", "pixels"];

fn harvest(v: &serde_json::Value, numbers: &mut Vec<f64>, strings: &mut BTreeSet<String>) {
    match v {
        serde_json::Value::Number(n) => {
            if let Some(x) = n.as_f64() {
                numbers.push(x);
            }
        }
        serde_json::Value::String(s) => strings.extend(numerals(s)),
        serde_json::Value::Array(a) => a.iter().for_each(|x| harvest(x, numbers, strings)),
        serde_json::Value::Object(o) => {
            for (k, x) in o {
                if !SKIPPED_FIELDS.contains(&k.as_str()) {
                    harvest(x, numbers, strings);
                }
            }
        }
        _ => {}
    }
}

/// Numerals of the report that no cited entry supports, plus citations
/// that do not resolve. A numeral with `d` decimals is supported when a
/// cited number rounds to it at `d` decimals, when a cited string contains
/// it, when it is a cited entry id, or when it is the number of cited
/// votes for one option.
pub fn ungrounded_numerals(report: &Report, snap: &BankSnapshot) -> Vec<String> {
    let mut bad = Vec::new();
    let mut numbers = Vec::new();
    let mut strings = BTreeSet::new();
    let mut vote_counts: BTreeMap<&str, usize> = BTreeMap::new();
    for id in &report.citations {
        let Some(e) = snap.get(*id) else {
            bad.push(format!("citation {id}"));
            continue;
        };
        strings.insert(id.to_string());
        if let Ok(v) = serde_json::to_value(&e.item) {
            harvest(&v, &mut numbers, &mut strings);
        }
        if let EvidenceItem::Vote(v) = &e.item {
            *vote_counts.entry(v.key.as_str()).or_default() += 1;
        }
    }
    strings.extend(vote_counts.values().map(usize::to_string));
    let text = format!("{}\n{}\n{}", report.findings, report.impression, report.note);
    for n in numerals(&text) {
        if strings.contains(&n) {
            continue;
        }
        let d = n.split_once('.').map_or(0, |(_, f)| f.len());
        if !numbers.iter().any(|x| format!("{x:.d$}") == n) {
            bad.push(n);
        }
    }
    bad
}

fn section<'t>(text: &'t str, name: &str, next: &[&str]) -> Option<&'t str> {
    let start = text.find(&format!("{name}:"))? + name.len() + 1;
    let rest = &text[start..];
    let end = next
        .iter()
        .filter_map(|n| rest.find(&format!("{n}:")))
        .min()
        .unwrap_or(rest.len());
    let s = rest[..end].trim();
    (!s.is_empty()).then_some(s)
}

/// Lets the report writer reword the template. The rewrite is kept only if
/// it has all three sections and introduces no unsupported numeral.
pub fn polish_report(report: &Report, snap: &BankSnapshot, backend: &TextBackend, query_id: &str) -> Report {
    let reject = || {
        let mut r = report.clone();
        if !r.flags.iter().any(|f| f == FLAG_POLISH_REJECTED) {
            r.flags.push(FLAG_POLISH_REJECTED.to_string());
            r.flags.sort();
        }
        r
    };
    let Ok(reply) = backend.complete(AgentRole::ReportWriter, query_id, &report.to_text()) else {
        return reject();
    };
    let (Some(f), Some(i), Some(n)) = (
        section(&reply, "Findings", &["Impression", "Note"]),
        section(&reply, "Impression", &["Note"]),
        section(&reply, "Note", &["Flags"]),
    ) else {
        return reject();
    };
    let candidate = Report {
        findings: f.to_string(),
        impression: i.to_string(),
        note: n.to_string(),
        citations: report.citations.clone(),
        flags: report.flags.clone(),
    };
    if ungrounded_numerals(&candidate, snap).is_empty() {
        candidate
    } else {
        reject()
    }
}
