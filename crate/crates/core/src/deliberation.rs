//! Voter agents over a text backend.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::orchestration::QuestionContext;
use crate::types::{ImageRef, OptionItem, Query};

pub const ANSWER_FORMAT: &str = include_str!("../assets/prompts/answer_format.txt");
pub const ARBITER_PROMPT: &str = include_str!("../assets/prompts/arbiter.txt");
pub const REPORT_WRITER_PROMPT: &str = include_str!("../assets/prompts/report_writer.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoterProfile {
    StructureSpecialist,
    EvidenceSpecialist,
    EliminationReasoner,
    UncertaintyReviewer,
    IntegratedJudgement,
}

impl VoterProfile {
    pub const ALL: [VoterProfile; 5] = [
        VoterProfile::StructureSpecialist,
        VoterProfile::EvidenceSpecialist,
        VoterProfile::EliminationReasoner,
        VoterProfile::UncertaintyReviewer,
        VoterProfile::IntegratedJudgement,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            VoterProfile::StructureSpecialist => "structure_specialist",
            VoterProfile::EvidenceSpecialist => "evidence_specialist",
            VoterProfile::EliminationReasoner => "elimination_reasoner",
            VoterProfile::UncertaintyReviewer => "uncertainty_reviewer",
            VoterProfile::IntegratedJudgement => "integrated_judgement",
        }
    }

    /// System prompt of this profile.
    pub fn template(self) -> &'static str {
        match self {
            VoterProfile::StructureSpecialist => include_str!("../assets/prompts/structure_specialist.txt"),
            VoterProfile::EvidenceSpecialist => include_str!("../assets/prompts/evidence_specialist.txt"),
            VoterProfile::EliminationReasoner => include_str!("../assets/prompts/elimination_reasoner.txt"),
            VoterProfile::UncertaintyReviewer => include_str!("../assets/prompts/uncertainty_reviewer.txt"),
            VoterProfile::IntegratedJudgement => include_str!("../assets/prompts/integrated_judgement.txt"),
        }
    }
}

impl std::fmt::Display for VoterProfile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Caller identity for a backend completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgentRole {
    Voter(VoterProfile),
    Arbiter,
    ReportWriter,
}

impl AgentRole {
    pub fn key(self) -> &'static str {
        match self {
            AgentRole::Voter(p) => p.as_str(),
            AgentRole::Arbiter => "arbiter",
            AgentRole::ReportWriter => "report_writer",
        }
    }

    pub fn system_prompt(self) -> &'static str {
        match self {
            AgentRole::Voter(p) => p.template(),
            AgentRole::Arbiter => ARBITER_PROMPT,
            AgentRole::ReportWriter => REPORT_WRITER_PROMPT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteRecord {
    pub profile: VoterProfile,
    pub key: String,
    pub rationale: String,
}

/// A voter whose replies could not be read as an option; not counted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Abstention {
    pub profile: VoterProfile,
    pub reason: String,
    pub reply: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Deliberation {
    pub votes: Vec<VoteRecord>,
    pub abstentions: Vec<Abstention>,
    /// Rendered user prompt per voter, kept for inspection.
    #[serde(skip)]
    pub prompts: BTreeMap<VoterProfile, String>,
}

/// Canned replies keyed by role and query id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScriptedBackend {
    /// query id -> role key -> reply
    pub replies: BTreeMap<String, BTreeMap<String, String>>,
}

impl ScriptedBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, role: AgentRole, query_id: impl Into<String>, reply: impl Into<String>) {
        self.replies
            .entry(query_id.into())
            .or_default()
            .insert(role.key().to_string(), reply.into());
    }

    /// Same reply for all five voters.
    pub fn insert_unanimous(&mut self, query_id: &str, reply: &str) {
        for p in VoterProfile::ALL {
            self.insert(AgentRole::Voter(p), query_id, reply);
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    fn lookup(&self, role: AgentRole, query_id: &str) -> Result<&str> {
        self.replies
            .get(query_id)
            .and_then(|m| m.get(role.key()))
            .map(String::as_str)
            .ok_or_else(|| Error::MissingScript {
                role: role.key().to_string(),
                query: query_id.to_string(),
            })
    }
}

/// Chat-completion endpoint settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteBackend {
    /// Full URL of the chat completions endpoint.
    pub endpoint: String,
    pub model: String,
    #[serde(default)]
    pub api_key: Option<String>,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_timeout_secs() -> u64 {
    60
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum TextBackend {
    Scripted(ScriptedBackend),
    Remote(RemoteBackend),
}

impl TextBackend {
    /// One completion. Scripted lookups are keyed by `query_id`.
    pub fn complete(&self, role: AgentRole, query_id: &str, prompt: &str) -> Result<String> {
        match self {
            TextBackend::Scripted(s) => s.lookup(role, query_id).map(str::to_string),
            TextBackend::Remote(r) => remote_complete(r, role.system_prompt(), prompt),
        }
    }
}

#[cfg(feature = "remote")]
fn remote_complete(cfg: &RemoteBackend, system: &str, prompt: &str) -> Result<String> {
    let body = serde_json::json!({
        "model": cfg.model,
        "temperature": cfg.temperature,
        "messages": [
            {"role": "system", "content": system},
            {"role": "user", "content": prompt},
        ],
    });
    let agent = ureq::AgentBuilder::new()
        .timeout(Duration::from_secs(cfg.timeout_secs))
        .build();
    let mut last = String::new();
    for _ in 0..2 {
        let mut req = agent.post(&cfg.endpoint);
        if let Some(key) = &cfg.api_key {
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        match req.send_json(&body) {
            Ok(resp) => {
                let v: serde_json::Value = resp
                    .into_json()
                    .map_err(|e| Error::BackendUnavailable(e.to_string()))?;
                return v["choices"][0]["message"]["content"]
                    .as_str()
                    .map(str::to_string)
                    .ok_or_else(|| Error::BackendUnavailable("reply has no choices[0].message.content".into()));
            }
            Err(e) => last = e.to_string(),
        }
    }
    Err(Error::BackendUnavailable(last))
}

#[cfg(not(feature = "remote"))]
fn remote_complete(_: &RemoteBackend, _: &str, _: &str) -> Result<String> {
    let _ = Duration::ZERO;
    Err(Error::BackendUnavailable("built without remote support".into()))
}

fn answer_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\banswer\s*:\s*\(\s*([a-z])\s*\)").unwrap())
}

fn letter_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?:^|[^A-Za-z0-9])([A-Z])(?:$|[^A-Za-z0-9])").unwrap())
}

/// Reads an option key out of a free-text reply: `Answer: (<key>)` first,
/// then the first standalone capital letter that names an option.
pub fn extract_answer(reply: &str, options: &[OptionItem]) -> Option<(String, String)> {
    let valid = |k: &str| options.iter().any(|o| o.key == k);
    if let Some(c) = answer_re().captures(reply) {
        let key = c[1].to_uppercase();
        if valid(&key) {
            let rest = reply[c.get(0).unwrap().end()..].trim();
            return Some((key, rest.to_string()));
        }
    }
    let mut pos = 0;
    while let Some(c) = letter_re().captures_at(reply, pos) {
        let m = c.get(1).unwrap();
        if valid(m.as_str()) {
            return Some((m.as_str().to_string(), reply.trim().to_string()));
        }
        pos = m.end();
    }
    None
}

/// User prompt for one voter: only the question, options, image metadata
/// and analyst context. Nothing from other voters enters it.
pub fn render_voter_prompt(profile: VoterProfile, query: &Query, image: &ImageRef, context: &QuestionContext) -> String {
    let mut s = String::new();
    s.push_str(&format!("Voter role: {}\n\n", profile.as_str()));
    s.push_str(&format!("Question: {}\n", query.text.trim()));
    s.push_str("Options:\n");
    for o in &context.options {
        s.push_str(&format!("({}) {}\n", o.key, o.text));
    }
    let (w, h) = image.dims();
    s.push_str(&format!(
        "\nImage: {} ({}x{} px, {} mm/px)\n",
        image.id, w, h, image.spacing_mm_per_px
    ));
    s.push_str(&format!("Task hypothesis: {}\n", context.task_hypothesis.display_name()));
    if !context.keywords.is_empty() {
        let kw: Vec<&str> = context.keywords.iter().map(String::as_str).collect();
        s.push_str(&format!("Keywords: {}\n", kw.join(", ")));
    }
    s.push('\n');
    s.push_str(ANSWER_FORMAT.trim());
    s
}

enum VoterOutcome {
    Vote(VoteRecord),
    Abstain(Abstention),
}

fn run_one(profile: VoterProfile, prompt: &str, query_id: &str, options: &[OptionItem], backend: &TextBackend) -> Result<VoterOutcome> {
    let role = AgentRole::Voter(profile);
    let mut last = String::new();
    for _ in 0..2 {
        let reply = backend.complete(role, query_id, prompt)?;
        if let Some((key, rationale)) = extract_answer(&reply, options) {
            return Ok(VoterOutcome::Vote(VoteRecord {
                profile,
                key,
                rationale,
            }));
        }
        last = reply;
    }
    Ok(VoterOutcome::Abstain(Abstention {
        profile,
        reason: "no option key in reply after retry".into(),
        reply: last,
    }))
}

/// Runs the five voters independently; results are ordered by profile.
pub fn run_voters(query: &Query, image: &ImageRef, context: &QuestionContext, backend: &TextBackend) -> Result<Deliberation> {
    if context.options.is_empty() {
        return Err(Error::invalid("voters need a query with options"));
    }
    let prompts: BTreeMap<VoterProfile, String> = VoterProfile::ALL
        .iter()
        .map(|&p| (p, render_voter_prompt(p, query, image, context)))
        .collect();
    let call = |p: VoterProfile| run_one(p, &prompts[&p], &query.id, &context.options, backend);

    #[cfg(not(target_arch = "wasm32"))]
    let outcomes: Vec<Result<VoterOutcome>> = std::thread::scope(|s| {
        let handles: Vec<_> = VoterProfile::ALL
            .iter()
            .map(|&p| s.spawn(move || call(p)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("voter thread panicked")).collect()
    });
    #[cfg(target_arch = "wasm32")]
    let outcomes: Vec<Result<VoterOutcome>> = VoterProfile::ALL.iter().map(|&p| call(p)).collect();

    let mut out = Deliberation {
        prompts,
        ..Default::default()
    };
    for o in outcomes {
        match o? {
            VoterOutcome::Vote(v) => out.votes.push(v),
            VoterOutcome::Abstain(a) => out.abstentions.push(a),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orchestration::{build_context, RoutingTable};
    use crate::types::options_from_texts;

    fn fixture() -> (Query, ImageRef, QuestionContext) {
        let q = Query::new(
            "q1",
            "Which plane is shown?",
            options_from_texts(&["Abdomen", "Brain", "Femur", "Thorax"]),
            vec![],
        )
        .unwrap();
        let img = ImageRef::blank("img-1", 16, 16, 0.2).unwrap();
        let ctx = build_context(&q, Some(&img), &RoutingTable::default());
        (q, img, ctx)
    }

    #[test]
    fn unanimous_script_gives_five_votes() {
        let (q, img, ctx) = fixture();
        let mut s = ScriptedBackend::new();
        s.insert_unanimous("q1", "Answer: (B) midline echo visible");
        let d = run_voters(&q, &img, &ctx, &TextBackend::Scripted(s)).unwrap();
        assert_eq!(d.votes.len(), 5);
        assert!(d.votes.iter().all(|v| v.key == "B"));
        assert_eq!(d.votes[0].rationale, "midline echo visible");
        let order: Vec<VoterProfile> = d.votes.iter().map(|v| v.profile).collect();
        assert_eq!(order, VoterProfile::ALL);
    }

    #[test]
    fn split_script_preserves_assignment_and_abstains() {
        let (q, img, ctx) = fixture();
        let mut s = ScriptedBackend::new();
        for (i, p) in VoterProfile::ALL.iter().enumerate() {
            let reply = match i {
                0..=2 => "Answer: (A)",
                3 => "answer: (b) maybe",
                _ => "cannot tell",
            };
            s.insert(AgentRole::Voter(*p), "q1", reply);
        }
        let d = run_voters(&q, &img, &ctx, &TextBackend::Scripted(s)).unwrap();
        let keys: Vec<&str> = d.votes.iter().map(|v| v.key.as_str()).collect();
        assert_eq!(keys, ["A", "A", "A", "B"]);
        assert_eq!(d.abstentions.len(), 1);
        assert_eq!(d.abstentions[0].profile, VoterProfile::IntegratedJudgement);
        assert_eq!(d.votes.len() + d.abstentions.len(), 5);
    }

    #[test]
    fn extraction_grammar() {
        let opts = options_from_texts(&["x", "y", "z"]);
        assert_eq!(
            extract_answer("Answer: (C) because the falx is absent", &opts),
            Some(("C".into(), "because the falx is absent".into()))
        );
        assert_eq!(extract_answer("I pick B.", &opts).unwrap().0, "B");
        assert_eq!(extract_answer("Answer: (Q)", &opts), None);
        assert_eq!(extract_answer("Definitely D", &opts), None);
        assert_eq!(extract_answer("no idea", &opts), None);
    }

    #[test]
    fn missing_script_is_an_error() {
        let b = TextBackend::Scripted(ScriptedBackend::new());
        assert!(matches!(
            b.complete(AgentRole::Arbiter, "q9", "p"),
            Err(Error::MissingScript { .. })
        ));
    }

    #[test]
    fn unreachable_remote_is_backend_unavailable() {
        let b = TextBackend::Remote(RemoteBackend {
            endpoint: "http://127.0.0.1:9/v1/chat/completions".into(),
            model: "m".into(),
            api_key: None,
            temperature: 0.0,
            timeout_secs: 1,
        });
        assert!(matches!(
            b.complete(AgentRole::Arbiter, "q", "p"),
            Err(Error::BackendUnavailable(_))
        ));
    }

    #[test]
    fn prompts_differ_only_by_role() {
        let (q, img, ctx) = fixture();
        let a = render_voter_prompt(VoterProfile::StructureSpecialist, &q, &img, &ctx);
        let b = render_voter_prompt(VoterProfile::IntegratedJudgement, &q, &img, &ctx);
        assert_ne!(a, b);
        assert_eq!(a.lines().skip(1).collect::<Vec<_>>(), b.lines().skip(1).collect::<Vec<_>>());
    }
}
