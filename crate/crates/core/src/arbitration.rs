//! Dual-path arbitration between voter deliberation and tool evidence.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::deliberation::{extract_answer, AgentRole, TextBackend, VoteRecord};
use crate::error::{Error, Result};
use crate::evidence::{EvidenceBank, RetrievedSnippet};
use crate::toolkit::{Prediction, ToolEvidence};
use crate::types::{Measurement, OptionItem, Unit};

pub const DEFAULT_SYNONYMS: &str = include_str!("../assets/synonyms.toml");
pub const DEFAULT_TOOL_WEIGHT: f64 = 3.0;

/// Lowercased words of a text; hyphens stay inside words.
fn words(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !(c.is_alphanumeric() || c == '-'))
        .map(|t| t.trim_matches('-'))
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

fn contains_phrase(hay: &[String], phrase: &[String]) -> bool {
    !phrase.is_empty() && hay.windows(phrase.len()).any(|w| w == phrase)
}

/// Label vocabulary used to match tool labels against option texts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynonymTable {
    pub labels: BTreeMap<String, Vec<String>>,
    pub binary: BTreeMap<String, Vec<String>>,
}

impl Default for SynonymTable {
    fn default() -> Self {
        Self::parse(DEFAULT_SYNONYMS).expect("bundled synonym table parses")
    }
}

impl SynonymTable {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("synonym table: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    fn phrases(&self, label: &str) -> Vec<Vec<String>> {
        let mut out = vec![words(label)];
        if let Some(list) = self.labels.get(&label.to_lowercase()) {
            out.extend(list.iter().map(|p| words(p)));
        }
        out
    }

    /// Whether `text` names the class `label`.
    pub fn names(&self, text: &str, label: &str) -> bool {
        let hay = words(text);
        self.phrases(label).iter().any(|p| contains_phrase(&hay, p))
    }

    /// Option naming the label: an exact text match first, then any synonym.
    fn direct_option(&self, label: &str, options: &[OptionItem]) -> Option<String> {
        let target = words(label);
        if let Some(o) = options.iter().find(|o| words(&o.text) == target) {
            return Some(o.key.clone());
        }
        let phrases = self.phrases(label);
        let hits: Vec<&OptionItem> = options
            .iter()
            .filter(|o| {
                let w = words(&o.text);
                phrases.contains(&w)
            })
            .collect();
        match hits.as_slice() {
            [one] => Some(one.key.clone()),
            _ => None,
        }
    }

    fn binary_key(&self, which: &str, options: &[OptionItem]) -> Option<String> {
        let list = self.binary.get(which)?;
        options
            .iter()
            .find(|o| list.iter().any(|p| words(&o.text) == words(p)))
            .map(|o| o.key.clone())
    }

    /// Maps a tool label to an option. Yes/No options are answered by
    /// whether the question names the label's class or another known class.
    pub fn label_to_option(&self, label: &str, question: &str, options: &[OptionItem]) -> Option<String> {
        if let Some(k) = self.direct_option(label, options) {
            return Some(k);
        }
        let yes = self.binary_key("yes", options)?;
        let no = self.binary_key("no", options)?;
        if self.names(question, label) {
            return Some(yes);
        }
        let other = self
            .labels
            .keys()
            .filter(|k| !k.eq_ignore_ascii_case(label))
            .any(|k| self.names(question, k));
        other.then_some(no)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum OptionValue {
    Range(f64, f64, Option<Unit>),
    Single(f64, Option<Unit>),
}

fn range_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(-?\d+(?:\.\d+)?)\s*(?:–|—|-|to)\s*(-?\d+(?:\.\d+)?)\s*([^\s,;)]*)").unwrap()
    })
}

fn single_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(-?\d+(?:\.\d+)?)\s*([^\s,;)]*)").unwrap())
}

fn parse_option(text: &str) -> Option<OptionValue> {
    if let Some(c) = range_re().captures(text) {
        let a: f64 = c[1].parse().ok()?;
        let b: f64 = c[2].parse().ok()?;
        let unit = Unit::parse(&c[3]);
        return Some(OptionValue::Range(a.min(b), a.max(b), unit));
    }
    let c = single_re().captures(text)?;
    Some(OptionValue::Single(c[1].parse().ok()?, Unit::parse(&c[2])))
}

fn unit_ok(opt: Option<Unit>, want: Unit) -> bool {
    opt.is_none_or(|u| u == want)
}

/// Option whose numeric range contains the value. Ranges are half-open
/// `[x, y)`; a single value covers half the gap to each neighbour.
/// `Ok(None)` means no option contains the value.
pub fn map_measurement_to_option(value: &Measurement, options: &[OptionItem]) -> Result<Option<String>> {
    if options.is_empty() {
        return Err(Error::invalid("no options to map onto"));
    }
    let parsed: Vec<(&OptionItem, OptionValue)> = options
        .iter()
        .filter_map(|o| parse_option(&o.text).map(|v| (o, v)))
        .collect();
    if parsed.is_empty() {
        return Err(Error::UnparseableOptions);
    }
    let v = value.value;
    for (o, p) in &parsed {
        if let OptionValue::Range(lo, hi, unit) = p {
            if unit_ok(*unit, value.unit) && *lo <= v && v < *hi {
                return Ok(Some(o.key.clone()));
            }
        }
    }
    let mut singles: Vec<(f64, &OptionItem)> = parsed
        .iter()
        .filter_map(|(o, p)| match p {
            OptionValue::Single(x, unit) if unit_ok(*unit, value.unit) => Some((*x, *o)),
            _ => None,
        })
        .collect();
    singles.sort_by(|a, b| a.0.total_cmp(&b.0));
    for i in 0..singles.len() {
        let x = singles[i].0;
        let left = (i > 0).then(|| x - singles[i - 1].0);
        let right = singles.get(i + 1).map(|n| n.0 - x);
        let (l, r) = match (left, right) {
            (Some(l), Some(r)) => (l, r),
            (Some(l), None) => (l, l),
            (None, Some(r)) => (r, r),
            (None, None) => (0.0, 0.0),
        };
        let hit = if l == 0.0 && r == 0.0 {
            (v - x).abs() < 1e-9
        } else {
            x - l / 2.0 <= v && v < x + r / 2.0
        };
        if hit {
            return Ok(Some(singles[i].1.key.clone()));
        }
    }
    Ok(None)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArbiterMode {
    #[default]
    Deterministic,
    LlmArbitrated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArbitrationPolicy {
    #[serde(default)]
    pub mode: ArbiterMode,
    #[serde(default = "default_tool_weight")]
    pub tool_weight: f64,
}

fn default_tool_weight() -> f64 {
    DEFAULT_TOOL_WEIGHT
}

impl Default for ArbitrationPolicy {
    fn default() -> Self {
        Self {
            mode: ArbiterMode::Deterministic,
            tool_weight: DEFAULT_TOOL_WEIGHT,
        }
    }
}

/// Which branch of the policy produced the decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionRule {
    MeasurementInterval,
    WeightedPlurality,
    ToolBackedTie,
    VotePlurality,
    Llm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSupport {
    pub entry_id: u64,
    pub expert_id: String,
    pub value: f64,
    pub unit: Unit,
    pub key: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSupport {
    pub entry_id: u64,
    pub expert_id: String,
    pub label: String,
    pub key: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Justification {
    pub rule: DecisionRule,
    /// Unit-weight vote counts per option key.
    pub vote_tally: BTreeMap<String, usize>,
    /// Vote counts plus tool weight, when tool labels took part.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub weighted_tally: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measurement: Option<MeasurementSupport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tool_labels: Vec<LabelSupport>,
    pub tie_broken: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub llm_fallback: Option<String>,
    /// Bank entry ids the decision rests on, ascending.
    pub citations: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalDecision {
    pub key: String,
    pub mode: ArbiterMode,
    pub justification: Justification,
}

/// Bank entries visible to the arbiter, by id.
#[derive(Debug, Clone, Default)]
pub struct EvidenceView<'a> {
    pub votes: Vec<(u64, &'a VoteRecord)>,
    pub tools: Vec<(u64, &'a ToolEvidence)>,
    pub snippets: Vec<(u64, &'a RetrievedSnippet)>,
}

impl<'a> EvidenceView<'a> {
    pub fn from_bank(bank: &'a EvidenceBank) -> Self {
        Self {
            votes: bank.votes().collect(),
            tools: bank.tools().collect(),
            snippets: bank.snippets().collect(),
        }
    }

    pub fn without_tools(mut self) -> Self {
        self.tools.clear();
        self
    }

    pub fn without_votes(mut self) -> Self {
        self.votes.clear();
        self
    }
}

fn tally(votes: &[(u64, &VoteRecord)]) -> BTreeMap<String, usize> {
    let mut t = BTreeMap::new();
    for (_, v) in votes {
        *t.entry(v.key.clone()).or_insert(0) += 1;
    }
    t
}

/// Highest count; ties go to a preferred key, then to the smallest key.
fn plurality<'k>(counts: impl Iterator<Item = (&'k String, f64)>, preferred: &BTreeSet<String>) -> Option<(String, bool)> {
    let counts: Vec<(&String, f64)> = counts.collect();
    let best = counts.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
    let mut top: Vec<&String> = counts.iter().filter(|c| c.1 == best).map(|c| c.0).collect();
    top.sort();
    let tied = top.len() > 1;
    let pick = top
        .iter()
        .find(|k| preferred.contains(**k))
        .or(top.first())
        .map(|k| (*k).clone())?;
    Some((pick, tied))
}

/// The deterministic policy. Exactly one branch fires:
/// measurement interval, weighted plurality (with tool-backed tie-break),
/// or plain vote plurality.
pub fn arbitrate_deterministic(
    view: &EvidenceView,
    question: &str,
    options: &[OptionItem],
    policy: &ArbitrationPolicy,
    synonyms: &SynonymTable,
) -> Result<FinalDecision> {
    if view.votes.is_empty() && view.tools.is_empty() {
        return Err(Error::NoEvidence);
    }
    let vote_tally = tally(&view.votes);
    let vote_ids: Vec<u64> = view.votes.iter().map(|(id, _)| *id).collect();
    let snippet_ids: Vec<u64> = view.snippets.iter().map(|(id, _)| *id).collect();
    let finish = |key: String, rule, extra: Justification| {
        let mut j = extra;
        j.rule = rule;
        j.citations.extend(&snippet_ids);
        j.citations.sort_unstable();
        j.citations.dedup();
        FinalDecision {
            key,
            mode: ArbiterMode::Deterministic,
            justification: j,
        }
    };
    let base = Justification {
        rule: DecisionRule::VotePlurality,
        vote_tally: vote_tally.clone(),
        weighted_tally: BTreeMap::new(),
        measurement: None,
        tool_labels: Vec::new(),
        tie_broken: false,
        llm_fallback: None,
        citations: Vec::new(),
    };

    for (id, ev) in &view.tools {
        if let Prediction::Measurement(m) = &ev.prediction {
            if let Ok(Some(key)) = map_measurement_to_option(m, options) {
                let mut j = base.clone();
                j.measurement = Some(MeasurementSupport {
                    entry_id: *id,
                    expert_id: ev.expert_id.clone(),
                    value: m.value,
                    unit: m.unit,
                    key: key.clone(),
                });
                j.citations = vec![*id];
                j.citations.extend(&vote_ids);
                return Ok(finish(key, DecisionRule::MeasurementInterval, j));
            }
        }
    }

    let mut labels = Vec::new();
    for (id, ev) in &view.tools {
        if let Prediction::Label(label) = &ev.prediction {
            if let Some(key) = synonyms.label_to_option(label, question, options) {
                labels.push(LabelSupport {
                    entry_id: *id,
                    expert_id: ev.expert_id.clone(),
                    label: label.clone(),
                    key,
                });
            }
        }
    }

    if !labels.is_empty() {
        let mut weighted: BTreeMap<String, f64> =
            vote_tally.iter().map(|(k, c)| (k.clone(), *c as f64)).collect();
        let mut backed = BTreeSet::new();
        for l in &labels {
            *weighted.entry(l.key.clone()).or_insert(0.0) += policy.tool_weight;
            backed.insert(l.key.clone());
        }
        let (key, tied) = plurality(weighted.iter().map(|(k, v)| (k, *v)), &backed).expect("non-empty tally");
        let rule = if tied && backed.contains(&key) {
            DecisionRule::ToolBackedTie
        } else {
            DecisionRule::WeightedPlurality
        };
        let mut j = base.clone();
        j.weighted_tally = weighted;
        j.tie_broken = tied;
        j.citations = labels.iter().map(|l| l.entry_id).chain(vote_ids.iter().copied()).collect();
        j.tool_labels = labels;
        return Ok(finish(key, rule, j));
    }

    if vote_tally.is_empty() {
        return Err(Error::NoEvidence);
    }
    let (key, tied) = plurality(vote_tally.iter().map(|(k, c)| (k, *c as f64)), &BTreeSet::new()).expect("non-empty tally");
    let mut j = base;
    j.tie_broken = tied;
    j.citations = vote_ids;
    Ok(finish(key, DecisionRule::VotePlurality, j))
}

/// Plain-text digest of the arbiter's inputs.
pub fn evidence_digest(view: &EvidenceView, question: &str, options: &[OptionItem]) -> String {
    let mut s = format!("Question: {}\nOptions:\n", question);
    for o in options {
        s.push_str(&format!("({}) {}\n", o.key, o.text));
    }
    s.push_str("\nVotes:\n");
    for (id, v) in &view.votes {
        s.push_str(&format!("[{}] {} -> ({}) {}\n", id, v.profile, v.key, v.rationale));
    }
    s.push_str("\nTool evidence:\n");
    for (id, t) in &view.tools {
        let p = match &t.prediction {
            Prediction::Label(l) => format!("label {l}"),
            Prediction::Measurement(m) => format!("{} {}", m.value, m.unit.symbol()),
            Prediction::Mask(m) => format!("mask, {} px", m.area()),
        };
        s.push_str(&format!("[{}] {} ({}): {}\n", id, t.expert_id, t.task, p));
    }
    s.push_str("\nReference snippets:\n");
    for (id, r) in &view.snippets {
        s.push_str(&format!("[{}] {}\n", id, r.text.replace('\n', " ")));
    }
    s
}

/// Final decision under the configured mode. The LLM mode falls back to
/// the deterministic policy when its reply names no valid option.
pub fn arbitrate(
    view: &EvidenceView,
    question: &str,
    options: &[OptionItem],
    policy: &ArbitrationPolicy,
    synonyms: &SynonymTable,
    llm: Option<(&TextBackend, &str)>,
) -> Result<FinalDecision> {
    let det = arbitrate_deterministic(view, question, options, policy, synonyms);
    if policy.mode == ArbiterMode::Deterministic {
        return det;
    }
    let mut det = det?;
    let Some((backend, query_id)) = llm else {
        det.justification.llm_fallback = Some("no backend configured".into());
        return Ok(det);
    };
    let prompt = evidence_digest(view, question, options);
    let reason = match backend.complete(AgentRole::Arbiter, query_id, &prompt) {
        Ok(reply) => match extract_answer(&reply, options) {
            Some((key, _)) => {
                let mut j = det.justification.clone();
                j.rule = DecisionRule::Llm;
                j.citations = view
                    .votes
                    .iter()
                    .map(|e| e.0)
                    .chain(view.tools.iter().map(|e| e.0))
                    .chain(view.snippets.iter().map(|e| e.0))
                    .collect();
                j.citations.sort_unstable();
                return Ok(FinalDecision {
                    key,
                    mode: ArbiterMode::LlmArbitrated,
                    justification: j,
                });
            }
            None => "arbiter reply names no option".to_string(),
        },
        Err(e) => e.to_string(),
    };
    det.justification.llm_fallback = Some(reason);
    Ok(det)
}
