//! Append-only store of everything a run produced.

use serde::{Deserialize, Serialize};

use super::rag::RetrievedSnippet;
use crate::deliberation::{Abstention, VoteRecord};
use crate::error::{Error, Result};
use crate::orchestration::QuestionContext;
use crate::reporting::VerifiedFinding;
use crate::toolkit::ToolEvidence;
use crate::types::{GeneralTask, TaskKind};
use crate::workflows::{GaCrossCheck, KeyframeSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BankMode {
    SpecificTask,
    GeneralTask,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Section {
    Context,
    Votes,
    Tools,
    Rag,
}

/// Structured parse of an open-ended request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralContext {
    pub query_id: String,
    pub subtask: GeneralTask,
    pub source_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plane: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertFailure {
    pub expert_id: String,
    pub task: TaskKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_index: Option<usize>,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "tag", rename_all = "snake_case")]
pub enum EvidenceItem {
    Context(QuestionContext),
    Analysis(GeneralContext),
    Vote(VoteRecord),
    Abstention(Abstention),
    Tool(ToolEvidence),
    ExpertFailure(ExpertFailure),
    Finding(VerifiedFinding),
    Keyframes(KeyframeSet),
    GaCrossCheck(GaCrossCheck),
    Snippet(RetrievedSnippet),
}

impl EvidenceItem {
    pub fn section(&self) -> Section {
        match self {
            EvidenceItem::Context(_) | EvidenceItem::Analysis(_) => Section::Context,
            EvidenceItem::Vote(_) | EvidenceItem::Abstention(_) => Section::Votes,
            EvidenceItem::Tool(_)
            | EvidenceItem::ExpertFailure(_)
            | EvidenceItem::Finding(_)
            | EvidenceItem::Keyframes(_)
            | EvidenceItem::GaCrossCheck(_) => Section::Tools,
            EvidenceItem::Snippet(_) => Section::Rag,
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            EvidenceItem::Context(_) => "context",
            EvidenceItem::Analysis(_) => "analysis",
            EvidenceItem::Vote(_) => "vote",
            EvidenceItem::Abstention(_) => "abstention",
            EvidenceItem::Tool(_) => "tool",
            EvidenceItem::ExpertFailure(_) => "expert_failure",
            EvidenceItem::Finding(_) => "finding",
            EvidenceItem::Keyframes(_) => "keyframes",
            EvidenceItem::GaCrossCheck(_) => "ga_cross_check",
            EvidenceItem::Snippet(_) => "snippet",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankEntry {
    pub id: u64,
    #[serde(flatten)]
    pub item: EvidenceItem,
}

/// Serialized bank: one list per section, entries in id order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankSnapshot {
    pub run_id: String,
    pub mode: BankMode,
    pub context: Vec<BankEntry>,
    pub votes: Vec<BankEntry>,
    pub tools: Vec<BankEntry>,
    pub rag: Vec<BankEntry>,
}

impl BankSnapshot {
    pub fn section(&self, s: Section) -> &[BankEntry] {
        match s {
            Section::Context => &self.context,
            Section::Votes => &self.votes,
            Section::Tools => &self.tools,
            Section::Rag => &self.rag,
        }
    }

    pub fn len(&self) -> usize {
        self.context.len() + self.votes.len() + self.tools.len() + self.rag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All entries ordered by id.
    pub fn entries(&self) -> Vec<&BankEntry> {
        let mut all: Vec<&BankEntry> = self
            .context
            .iter()
            .chain(&self.votes)
            .chain(&self.tools)
            .chain(&self.rag)
            .collect();
        all.sort_by_key(|e| e.id);
        all
    }

    pub fn get(&self, id: u64) -> Option<&BankEntry> {
        self.context
            .iter()
            .chain(&self.votes)
            .chain(&self.tools)
            .chain(&self.rag)
            .find(|e| e.id == id)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let snap: BankSnapshot = serde_json::from_str(text)?;
        EvidenceBank::from_snapshot(&snap)?;
        Ok(snap)
    }
}

#[derive(Debug, Clone)]
pub struct EvidenceBank {
    run_id: String,
    mode: BankMode,
    entries: Vec<BankEntry>,
}

impl EvidenceBank {
    pub fn new(run_id: impl Into<String>, mode: BankMode) -> Self {
        Self {
            run_id: run_id.into(),
            mode,
            entries: Vec::new(),
        }
    }

    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    pub fn mode(&self) -> BankMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[BankEntry] {
        &self.entries
    }

    pub fn get(&self, id: u64) -> Option<&BankEntry> {
        self.entries
            .binary_search_by_key(&id, |e| e.id)
            .ok()
            .map(|i| &self.entries[i])
    }

    /// Appends an item and returns its id (ids start at 1).
    pub fn append(&mut self, item: EvidenceItem) -> Result<u64> {
        if self.mode == BankMode::GeneralTask && item.section() == Section::Votes {
            return Err(Error::ModeViolation(format!(
                "{} entry in a general-task bank",
                item.tag()
            )));
        }
        let id = self.entries.last().map_or(1, |e| e.id + 1);
        self.entries.push(BankEntry { id, item });
        Ok(id)
    }

    pub fn snapshot(&self) -> BankSnapshot {
        let mut snap = BankSnapshot {
            run_id: self.run_id.clone(),
            mode: self.mode,
            context: Vec::new(),
            votes: Vec::new(),
            tools: Vec::new(),
            rag: Vec::new(),
        };
        for e in &self.entries {
            let list = match e.item.section() {
                Section::Context => &mut snap.context,
                Section::Votes => &mut snap.votes,
                Section::Tools => &mut snap.tools,
                Section::Rag => &mut snap.rag,
            };
            list.push(e.clone());
        }
        snap
    }

    /// Rebuilds a bank, checking section placement, id order and the mode law.
    pub fn from_snapshot(snap: &BankSnapshot) -> Result<Self> {
        for s in [Section::Context, Section::Votes, Section::Tools, Section::Rag] {
            let list = snap.section(s);
            if let Some(e) = list.iter().find(|e| e.item.section() != s) {
                return Err(Error::invalid(format!(
                    "entry {} ({}) filed under the wrong section",
                    e.id,
                    e.item.tag()
                )));
            }
            if list.windows(2).any(|w| w[0].id >= w[1].id) {
                return Err(Error::invalid("entry ids within a section must increase"));
            }
        }
        let mut bank = Self::new(snap.run_id.clone(), snap.mode);
        for e in snap.entries() {
            if bank.entries.last().is_some_and(|last| last.id >= e.id) || e.id == 0 {
                return Err(Error::invalid(format!("duplicate or invalid entry id {}", e.id)));
            }
            if bank.mode == BankMode::GeneralTask && e.item.section() == Section::Votes {
                return Err(Error::ModeViolation(format!("{} entry in a general-task bank", e.item.tag())));
            }
            bank.entries.push(e.clone());
        }
        Ok(bank)
    }

    pub fn votes(&self) -> impl Iterator<Item = (u64, &VoteRecord)> {
        self.entries.iter().filter_map(|e| match &e.item {
            EvidenceItem::Vote(v) => Some((e.id, v)),
            _ => None,
        })
    }

    pub fn tools(&self) -> impl Iterator<Item = (u64, &ToolEvidence)> {
        self.entries.iter().filter_map(|e| match &e.item {
            EvidenceItem::Tool(t) => Some((e.id, t)),
            _ => None,
        })
    }

    pub fn snippets(&self) -> impl Iterator<Item = (u64, &RetrievedSnippet)> {
        self.entries.iter().filter_map(|e| match &e.item {
            EvidenceItem::Snippet(s) => Some((e.id, s)),
            _ => None,
        })
    }
}
