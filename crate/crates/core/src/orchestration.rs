//! Coordinator and analyst: query routing, task allocation and the
//! structured question context shared with downstream agents.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::FusionRule;
use crate::types::{GeneralTask, ImageRef, OptionItem, Query, QueryRoute, TaskKind, Unit};

static OPTION_MARKER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\(([A-Z])\)").unwrap());
static UNIT_PATTERN: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)(?:\d\s*|\b)(mm|cm2|cm²|cm\^2|degrees?|°|weeks?)(?:\b|$|\s|[).,;])").unwrap()
});

pub const DEFAULT_ROUTING: &str = include_str!("../assets/routing.toml");

/// Coordinator routing: explicit options make a query specific; anything
/// else is a general request whose sub-task follows the attachment type.
pub fn route_query(query: &Query) -> QueryRoute {
    if !query.options.is_empty() || OPTION_MARKER.find_iter(&query.text).count() >= 2 {
        return QueryRoute::Specific;
    }
    if query.video().is_some() {
        QueryRoute::General(GeneralTask::VideoSummary)
    } else {
        QueryRoute::General(GeneralTask::Caption)
    }
}

/// Splits "stem (A) x (B) y" into the stem and keyed options. Returns no
/// options unless the markers run A, B, C... without gaps.
pub fn split_inline_options(text: &str) -> (String, Vec<OptionItem>) {
    let marks: Vec<_> = OPTION_MARKER.captures_iter(text).collect();
    if marks.len() < 2 {
        return (text.trim().to_string(), Vec::new());
    }
    let contiguous = marks
        .iter()
        .enumerate()
        .all(|(i, c)| c[1].as_bytes()[0] == b'A' + i as u8);
    if !contiguous {
        return (text.trim().to_string(), Vec::new());
    }
    let stem = text[..marks[0].get(0).unwrap().start()].trim().to_string();
    let mut options = Vec::with_capacity(marks.len());
    for (i, cap) in marks.iter().enumerate() {
        let whole = cap.get(0).unwrap();
        let end = marks
            .get(i + 1)
            .map(|n| n.get(0).unwrap().start())
            .unwrap_or(text.len());
        options.push(OptionItem::new(&cap[1], text[whole.end()..end].trim()));
    }
    (stem, options)
}

/// Lowercase tokens; hyphens stay inside tokens ("trans-thalamic").
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !(c.is_alphanumeric() || c == '-'))
        .map(|t| t.trim_matches('-'))
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct RoutingRule {
    pub task: TaskKind,
    pub any_of: Vec<Vec<String>>,
}

/// Ordered keyword rules mapping question wording to a task kind.
#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct RoutingTable {
    #[serde(default)]
    pub anatomy: Vec<String>,
    #[serde(rename = "rule")]
    pub rules: Vec<RoutingRule>,
}

impl Default for RoutingTable {
    fn default() -> Self {
        Self::parse(DEFAULT_ROUTING).expect("bundled routing table parses")
    }
}

fn keyword_matches(keyword: &str, tokens: &[String]) -> bool {
    if keyword.contains(' ') {
        let phrase: Vec<&str> = keyword.split_whitespace().collect();
        return tokens
            .windows(phrase.len())
            .any(|w| w.iter().zip(&phrase).all(|(t, p)| t == p));
    }
    match keyword.strip_suffix('*') {
        Some(prefix) => tokens.iter().any(|t| t.starts_with(prefix) && t.len() > prefix.len()),
        None => tokens.iter().any(|t| t == keyword),
    }
}

impl RoutingTable {
    pub fn parse(text: &str) -> Result<Self> {
        let table: RoutingTable =
            toml::from_str(text).map_err(|e| Error::Config(format!("routing table: {e}")))?;
        if table.rules.is_empty() {
            return Err(Error::Config("routing table has no rules".into()));
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// First rule any of whose alternatives is fully present.
    pub fn resolve(&self, tokens: &[String]) -> Option<TaskKind> {
        self.rules
            .iter()
            .find(|r| {
                r.any_of
                    .iter()
                    .any(|alt| !alt.is_empty() && alt.iter().all(|k| keyword_matches(k, tokens)))
            })
            .map(|r| r.task)
    }

    /// Lexicon entries and rule keywords present in the tokens.
    fn keywords(&self, tokens: &[String]) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        for t in tokens {
            if self.anatomy.iter().any(|a| a == t) {
                out.insert(t.clone());
            }
        }
        for kw in self.rules.iter().flat_map(|r| r.any_of.iter().flatten()) {
            if kw.contains(' ') {
                if keyword_matches(kw, tokens) {
                    out.insert(kw.clone());
                }
            } else if let Some(prefix) = kw.strip_suffix('*') {
                out.extend(
                    tokens
                        .iter()
                        .filter(|t| t.starts_with(prefix) && t.len() > prefix.len())
                        .cloned(),
                );
            } else if tokens.iter().any(|t| t == kw) {
                out.insert(kw.clone());
            }
        }
        out
    }
}

/// Analyst output: the parsed question shared by voters, arbiter and
/// report generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionContext {
    pub query_id: String,
    pub question: String,
    pub options: Vec<OptionItem>,
    pub keywords: BTreeSet<String>,
    pub units: BTreeSet<Unit>,
    pub task_hypothesis: TaskKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_id: Option<String>,
}

/// Deterministic analyst parse of a query and its image.
pub fn build_context(query: &Query, image: Option<&ImageRef>, table: &RoutingTable) -> QuestionContext {
    let (stem, inline) = split_inline_options(&query.text);
    let options = if query.options.is_empty() {
        inline
    } else {
        query.options.clone()
    };
    let tokens = tokenize(&stem);
    let mut units = BTreeSet::new();
    let mut scan = stem.clone();
    for o in &options {
        scan.push(' ');
        scan.push_str(&o.text);
    }
    for cap in UNIT_PATTERN.captures_iter(&scan) {
        if let Some(u) = Unit::parse(&cap[1]) {
            units.insert(u);
        }
    }
    QuestionContext {
        query_id: query.id.clone(),
        question: tokens.join(" "),
        options,
        keywords: table.keywords(&tokens),
        units,
        task_hypothesis: table.resolve(&tokens).unwrap_or(TaskKind::StandardPlane),
        image_id: image.map(|i| i.id.clone()),
    }
}

/// Expert agent definition: its tools and how their outputs are fused.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertSpec {
    pub id: String,
    pub task: TaskKind,
    pub tools: Vec<String>,
    pub fusion: FusionRule,
    /// Tie-break and fallback order; defaults to `tools` order.
    #[serde(default)]
    pub priority: Vec<String>,
}

impl ExpertSpec {
    pub fn new(id: impl Into<String>, task: TaskKind, tools: &[&str], fusion: FusionRule) -> Result<Self> {
        let spec = Self {
            id: id.into(),
            task,
            tools: tools.iter().map(|s| s.to_string()).collect(),
            fusion,
            priority: Vec::new(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tools.is_empty() {
            return Err(Error::Config(format!("expert {} has no tools", self.id)));
        }
        if let Some(p) = self.priority.iter().find(|p| !self.tools.contains(p)) {
            return Err(Error::Config(format!(
                "expert {} lists {p} in priority but not in tools",
                self.id
            )));
        }
        Ok(())
    }

    /// Priority order with unlisted tools appended in configuration order.
    pub fn priority_order(&self) -> Vec<String> {
        let mut order = self.priority.clone();
        order.extend(self.tools.iter().filter(|t| !self.priority.contains(t)).cloned());
        order
    }
}

/// Coordinator task allocation: resolves the task from the context
/// keywords and selects every registered expert for exactly that task.
pub fn allocate_task<'a>(
    context: &QuestionContext,
    registry: &'a [ExpertSpec],
    table: &RoutingTable,
) -> Result<(TaskKind, Vec<&'a ExpertSpec>)> {
    if registry.is_empty() {
        return Err(Error::invalid("expert registry is empty"));
    }
    let tokens = tokenize(&context.question);
    let task = table
        .resolve(&tokens)
        .ok_or_else(|| Error::NoMatchingExpert(format!("no routing rule matches {:?}", context.question)))?;
    let selected: Vec<&ExpertSpec> = registry.iter().filter(|e| e.task == task).collect();
    if selected.is_empty() {
        return Err(Error::NoMatchingExpert(task.to_string()));
    }
    Ok((task, selected))
}
