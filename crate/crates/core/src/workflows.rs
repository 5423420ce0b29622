//! End-to-end pipelines: deliberative VQA, image captioning and video
//! summarization.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::arbitration::{arbitrate, ArbitrationPolicy, EvidenceView, FinalDecision, SynonymTable};
use crate::deliberation::{run_voters, ScriptedBackend, TextBackend};
use crate::error::{Error, Result};
use crate::evidence::{
    BankMode, BankSnapshot, EvidenceBank, EvidenceItem, ExpertFailure, GeneralContext, VectorIndex, DEFAULT_TOP_K,
};
use crate::fusion::{FusionConfig, FusionRule};
use crate::orchestration::{allocate_task, build_context, route_query, ExpertSpec, RoutingTable};
use crate::reporting::{
    consistency_check_and_reflect, generate_report, invert_growth_curve, polish_report, ChartMeasure, FallbackMasks,
    FindingStatus, GrowthCharts, ReflectionConfig, Report, ReportSubject, VerifiedFinding,
};
use crate::toolkit::{invoke_expert, Prediction, ToolEvidence, ToolRegistry};
use crate::types::{GeneralTask, ImageRef, Measurement, Query, QueryRoute, TaskKind, Unit, VideoRef};

pub const CAPTION_QUERY: &str = "Generate a caption for this ultrasound image.";
pub const VIDEO_QUERY: &str = "Summarize the key findings in this ultrasound video.";
pub const DEFAULT_CAPTIONING: &str = include_str!("../assets/captioning.toml");
pub const DEFAULT_GA_TOLERANCE_WEEKS: f64 = 2.0;

/// Plane label -> tasks to run once that plane is recognised.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionTable {
    #[serde(default)]
    pub ignore: Vec<String>,
    pub planes: BTreeMap<String, Vec<TaskKind>>,
}

impl Default for CaptionTable {
    fn default() -> Self {
        Self::parse(DEFAULT_CAPTIONING).expect("bundled captioning table parses")
    }
}

impl CaptionTable {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("captioning table: {e}")))
    }

    pub fn tasks_for(&self, label: &str) -> &[TaskKind] {
        self.planes
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(label))
            .map_or(&[], |(_, v)| v.as_slice())
    }

    pub fn ignored(&self, label: &str) -> bool {
        self.ignore.iter().any(|i| i.eq_ignore_ascii_case(label))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyframeConfig {
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_max_per_plane")]
    pub max_per_plane: usize,
    /// Scoring tool; defaults to the first tool of the first plane expert.
    #[serde(default)]
    pub scorer: Option<String>,
}

fn default_threshold() -> f64 {
    0.5
}
fn default_window() -> usize {
    15
}
fn default_max_per_plane() -> usize {
    3
}

impl Default for KeyframeConfig {
    fn default() -> Self {
        Self {
            threshold: default_threshold(),
            window: default_window(),
            max_per_plane: default_max_per_plane(),
            scorer: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keyframe {
    pub frame_index: usize,
    pub label: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyframeSet {
    pub scorer: String,
    pub threshold: f64,
    pub window: usize,
    pub max_per_plane: usize,
    /// Ascending frame index.
    pub frames: Vec<Keyframe>,
}

/// Frames whose score reaches `threshold` and is a local maximum within
/// `±window` frames. Among equal scores the earliest frame wins. Each label
/// keeps at most `max_per_plane` frames, best scores first. Frames with an
/// ignored label count as score zero.
pub fn select_keyframes(
    scored: &[(String, f64)],
    threshold: f64,
    window: usize,
    max_per_plane: usize,
    ignore: impl Fn(&str) -> bool,
) -> Vec<Keyframe> {
    let s: Vec<f64> = scored
        .iter()
        .map(|(l, v)| if ignore(l) { 0.0 } else { *v })
        .collect();
    let n = s.len();
    let mut picked: BTreeMap<&str, Vec<Keyframe>> = BTreeMap::new();
    for i in 0..n {
        if s[i] < threshold || ignore(&scored[i].0) {
            continue;
        }
        let lo = i.saturating_sub(window);
        let hi = (i + window).min(n - 1);
        let before = (lo..i).all(|j| s[j] < s[i]);
        let after = (i + 1..=hi).all(|j| s[j] <= s[i]);
        if before && after {
            picked.entry(scored[i].0.as_str()).or_default().push(Keyframe {
                frame_index: i,
                label: scored[i].0.clone(),
                score: s[i],
            });
        }
    }
    let mut out: Vec<Keyframe> = picked
        .into_values()
        .flat_map(|mut v| {
            v.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.frame_index.cmp(&b.frame_index)));
            v.truncate(max_per_plane);
            v
        })
        .collect();
    out.sort_by_key(|k| k.frame_index);
    out
}

/// Scores every frame with the scorer tool and selects keyframes.
pub fn extract_keyframes(
    registry: &ToolRegistry,
    video: &VideoRef,
    scorer: &str,
    cfg: &KeyframeConfig,
    captions: &CaptionTable,
) -> Result<KeyframeSet> {
    if video.frames().is_empty() {
        return Err(Error::EmptyVideo);
    }
    if !(cfg.threshold > 0.0 && cfg.threshold < 1.0) || cfg.window == 0 {
        return Err(Error::Config("keyframe threshold must be in (0,1) and window at least 1".into()));
    }
    if registry.get(scorer).is_none() {
        return Err(Error::UnknownTool(scorer.to_string()));
    }
    let score = |f: &ImageRef| -> Result<(String, f64)> {
        let out = registry.invoke(scorer, f, &serde_json::Value::Null)?;
        let label = out.label().ok_or_else(|| Error::MalformedOutput {
            tool: scorer.to_string(),
            reason: "keyframe scorer must return a label".into(),
        })?;
        Ok((label.to_string(), out.confidence().unwrap_or(0.0)))
    };
    let scored: Vec<(String, f64)> = video.frames().iter().map(score).collect::<Result<_>>()?;
    Ok(KeyframeSet {
        scorer: scorer.to_string(),
        threshold: cfg.threshold,
        window: cfg.window,
        max_per_plane: cfg.max_per_plane,
        frames: select_keyframes(&scored, cfg.threshold, cfg.window, cfg.max_per_plane, |l| captions.ignored(l)),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmpConfig {
    pub lmp_date: NaiveDate,
    pub exam_date: NaiveDate,
    #[serde(default = "default_tolerance")]
    pub tolerance_weeks: f64,
}

fn default_tolerance() -> f64 {
    DEFAULT_GA_TOLERANCE_WEEKS
}

/// Ultrasound GA against the date-based estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaCrossCheck {
    pub lmp_date: String,
    pub exam_date: String,
    pub ga_lmp_weeks: f64,
    pub ga_us_weeks: f64,
    pub difference_weeks: f64,
    pub tolerance_weeks: f64,
    pub discrepancy: bool,
}

pub fn ga_from_lmp(lmp: NaiveDate, exam: NaiveDate) -> f64 {
    (exam - lmp).num_days() as f64 / 7.0
}

pub fn ga_cross_check(ga_us_weeks: f64, lmp: &LmpConfig) -> GaCrossCheck {
    let ga_lmp = ga_from_lmp(lmp.lmp_date, lmp.exam_date);
    let diff = (ga_us_weeks - ga_lmp).abs();
    GaCrossCheck {
        lmp_date: lmp.lmp_date.to_string(),
        exam_date: lmp.exam_date.to_string(),
        ga_lmp_weeks: ga_lmp,
        ga_us_weeks,
        difference_weeks: diff,
        tolerance_weeks: lmp.tolerance_weeks,
        discrepancy: diff > lmp.tolerance_weeks,
    }
}

/// Component switches for ablation runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    /// Run the expert (computational) path.
    pub tools: bool,
    /// Run the voter (deliberative) path.
    pub voters: bool,
    /// Let the arbiter see tool evidence; off means plain voter majority.
    pub arbiter: bool,
    /// Each expert uses only its top-priority tool.
    pub single_tool: bool,
    pub retrieval: bool,
}

impl Ablation {
    pub const FULL: Ablation = Ablation {
        tools: true,
        voters: true,
        arbiter: true,
        single_tool: false,
        retrieval: true,
    };
    pub const VOTERS_ONLY: Ablation = Ablation {
        arbiter: false,
        ..Ablation::FULL
    };
    pub const TOOLS_DISABLED: Ablation = Ablation {
        tools: false,
        ..Ablation::FULL
    };
    pub const VOTERS_DISABLED: Ablation = Ablation {
        voters: false,
        ..Ablation::FULL
    };
    pub const SINGLE_TOOL: Ablation = Ablation {
        single_tool: true,
        ..Ablation::FULL
    };
    pub const NO_RETRIEVAL: Ablation = Ablation {
        retrieval: false,
        ..Ablation::FULL
    };

    pub fn by_name(name: &str) -> Option<Ablation> {
        Some(match name {
            "full" => Self::FULL,
            "voters_only" => Self::VOTERS_ONLY,
            "tools_disabled" => Self::TOOLS_DISABLED,
            "voters_disabled" => Self::VOTERS_DISABLED,
            "single_tool" => Self::SINGLE_TOOL,
            "no_retrieval" => Self::NO_RETRIEVAL,
            _ => return None,
        })
    }

    pub const NAMES: [&'static str; 6] = [
        "full",
        "voters_only",
        "tools_disabled",
        "voters_disabled",
        "single_tool",
        "no_retrieval",
    ];
}

impl Default for Ablation {
    fn default() -> Self {
        Self::FULL
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VqaOutcome {
    pub task: TaskKind,
    pub decision: FinalDecision,
    pub report: Report,
    pub bank: BankSnapshot,
}

#[derive(Debug, Clone, Serialize)]
pub struct GeneralOutcome {
    pub report: Report,
    pub bank: BankSnapshot,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "route", rename_all = "snake_case")]
pub enum Outcome {
    Vqa(VqaOutcome),
    Caption(GeneralOutcome),
    VideoSummary(GeneralOutcome),
}

/// Everything a pipeline run needs.
#[derive(Debug, Clone)]
pub struct Engine {
    pub registry: ToolRegistry,
    pub experts: Vec<ExpertSpec>,
    pub routing: RoutingTable,
    pub fusion: FusionConfig,
    pub backend: TextBackend,
    pub arbitration: ArbitrationPolicy,
    pub synonyms: SynonymTable,
    pub index: Option<VectorIndex>,
    pub top_k: usize,
    pub charts: GrowthCharts,
    pub reflection: ReflectionConfig,
    pub captions: CaptionTable,
    pub keyframes: KeyframeConfig,
    pub lmp: Option<LmpConfig>,
    /// Let the report writer reword reports (numerals are re-checked).
    pub polish: bool,
}

fn single_tool_spec(spec: &ExpertSpec) -> ExpertSpec {
    let top = spec.priority_order()[0].clone();
    let fusion = match spec.fusion {
        FusionRule::SequentialPrompt => FusionRule::PixelMajorityVote,
        FusionRule::EllipseBiometrySequential => FusionRule::EllipseBiometryMajority,
        f => f,
    };
    ExpertSpec {
        id: spec.id.clone(),
        task: spec.task,
        tools: vec![top],
        fusion,
        priority: Vec::new(),
    }
}

/// Runs `a` and `b` concurrently where threads exist.
fn join<A: Send, B: Send>(a: impl FnOnce() -> A + Send, b: impl FnOnce() -> B + Send) -> (A, B) {
    #[cfg(not(target_arch = "wasm32"))]
    {
        std::thread::scope(|s| {
            let ha = s.spawn(a);
            let rb = b();
            (ha.join().expect("worker panicked"), rb)
        })
    }
    #[cfg(target_arch = "wasm32")]
    {
        (a(), b())
    }
}

struct FrameAnalysis {
    ga_weeks: Option<f64>,
}

impl Engine {
    pub fn new(registry: ToolRegistry, experts: Vec<ExpertSpec>) -> Self {
        Self {
            registry,
            experts,
            routing: RoutingTable::default(),
            fusion: FusionConfig::default(),
            backend: TextBackend::Scripted(ScriptedBackend::new()),
            arbitration: ArbitrationPolicy::default(),
            synonyms: SynonymTable::default(),
            index: None,
            top_k: DEFAULT_TOP_K,
            charts: GrowthCharts::default(),
            reflection: ReflectionConfig::default(),
            captions: CaptionTable::default(),
            keyframes: KeyframeConfig::default(),
            lmp: None,
            polish: false,
        }
    }

    /// Routes the query and runs the matching workflow.
    pub fn handle(&self, query: &Query) -> Result<Outcome> {
        match route_query(query) {
            QueryRoute::Specific => self.answer_vqa(query).map(Outcome::Vqa),
            QueryRoute::General(GeneralTask::Caption) => {
                let img = query.image().ok_or_else(|| Error::invalid("caption request without an image"))?;
                self.caption_image_for(img, &query.id, &query.text).map(Outcome::Caption)
            }
            QueryRoute::General(GeneralTask::VideoSummary) => {
                let v = query.video().ok_or(Error::EmptyVideo)?;
                self.summarize_video_for(v, &query.id, &query.text).map(Outcome::VideoSummary)
            }
        }
    }

    fn run_experts(&self, specs: &[&ExpertSpec], image: &ImageRef, single_tool: bool) -> Vec<(ExpertSpec, Result<ToolEvidence>)> {
        let specs: Vec<ExpertSpec> = specs
            .iter()
            .map(|s| if single_tool { single_tool_spec(s) } else { (*s).clone() })
            .collect();
        #[cfg(not(target_arch = "wasm32"))]
        let results: Vec<Result<ToolEvidence>> = std::thread::scope(|sc| {
            let hs: Vec<_> = specs
                .iter()
                .map(|s| sc.spawn(move || invoke_expert(&self.registry, s, image, &self.fusion)))
                .collect();
            hs.into_iter().map(|h| h.join().expect("expert panicked")).collect()
        });
        #[cfg(target_arch = "wasm32")]
        let results: Vec<Result<ToolEvidence>> = specs
            .iter()
            .map(|s| invoke_expert(&self.registry, s, image, &self.fusion))
            .collect();
        specs.into_iter().zip(results).collect()
    }

    fn retrieve_into(&self, bank: &mut EvidenceBank, text: &str, enabled: bool) -> Result<()> {
        let Some(index) = self.index.as_ref().filter(|_| enabled) else {
            return Ok(());
        };
        match index.retrieve(text, self.top_k) {
            Ok(hits) => {
                for h in hits {
                    bank.append(EvidenceItem::Snippet(h))?;
                }
                Ok(())
            }
            Err(Error::EmptyIndex) => Ok(()),
            Err(e) => Err(e),
        }
    }

    fn finish_report(&self, snap: &BankSnapshot, subject: ReportSubject, query_id: &str) -> Result<Report> {
        let report = generate_report(snap, subject)?;
        Ok(if self.polish {
            polish_report(&report, snap, &self.backend, query_id)
        } else {
            report
        })
    }

    pub fn answer_vqa(&self, query: &Query) -> Result<VqaOutcome> {
        self.answer_vqa_with(query, Ablation::FULL)
    }

    /// Deliberative VQA: experts and voters in parallel, retrieval, then
    /// arbitration and a report over one specific-task bank.
    pub fn answer_vqa_with(&self, query: &Query, ablation: Ablation) -> Result<VqaOutcome> {
        if route_query(query) != QueryRoute::Specific {
            return Err(Error::invalid("answer_vqa needs a query with options"));
        }
        let image = query
            .image()
            .ok_or_else(|| Error::invalid("query has no image attachment"))?;
        let context = build_context(query, Some(image), &self.routing);
        let (task, selected) = allocate_task(&context, &self.experts, &self.routing)?;

        let (experts, voters) = join(
            || {
                if ablation.tools {
                    self.run_experts(&selected, image, ablation.single_tool)
                } else {
                    Vec::new()
                }
            },
            || {
                if ablation.voters {
                    run_voters(query, image, &context, &self.backend).map(Some)
                } else {
                    Ok(None)
                }
            },
        );
        let voters = voters?;

        let mut bank = EvidenceBank::new(format!("vqa:{}", query.id), BankMode::SpecificTask);
        bank.append(EvidenceItem::Context(context.clone()))?;
        if let Some(d) = voters {
            for v in d.votes {
                bank.append(EvidenceItem::Vote(v))?;
            }
            for a in d.abstentions {
                bank.append(EvidenceItem::Abstention(a))?;
            }
        }
        for (spec, r) in experts {
            let item = match r {
                Ok(ev) => EvidenceItem::Tool(ev),
                Err(e) => EvidenceItem::ExpertFailure(ExpertFailure {
                    expert_id: spec.id.clone(),
                    task: spec.task,
                    frame_index: None,
                    error: e.to_string(),
                }),
            };
            bank.append(item)?;
        }
        self.retrieve_into(&mut bank, &query.text, ablation.retrieval)?;

        let mut view = EvidenceView::from_bank(&bank);
        if !ablation.arbiter {
            view = view.without_tools();
        }
        let decision = arbitrate(
            &view,
            &context.question,
            &context.options,
            &self.arbitration,
            &self.synonyms,
            Some((&self.backend, &query.id)),
        )?;
        let snap = bank.snapshot();
        let report = self.finish_report(&snap, ReportSubject::Decision(&decision), &query.id)?;
        Ok(VqaOutcome {
            task,
            decision,
            report,
            bank: snap,
        })
    }

    /// Runs the experts a plane label activates and checks their
    /// measurements against the growth charts. Expert errors become
    /// failure entries.
    fn analyse_plane(&self, bank: &mut EvidenceBank, image: &ImageRef, label: &str, frame: Option<usize>) -> Result<FrameAnalysis> {
        let mut specs = Vec::new();
        for task in self.captions.tasks_for(label) {
            specs.extend(self.experts.iter().filter(|e| e.task == *task));
        }
        let mut measured: Vec<(u64, ToolEvidence, ExpertSpec)> = Vec::new();
        for (spec, r) in self.run_experts(&specs, image, false) {
            match r {
                Ok(ev) => {
                    let id = bank.append(EvidenceItem::Tool(ev.clone()))?;
                    measured.push((id, ev, spec));
                }
                Err(e) => {
                    bank.append(EvidenceItem::ExpertFailure(ExpertFailure {
                        expert_id: spec.id.clone(),
                        task: spec.task,
                        frame_index: frame,
                        error: e.to_string(),
                    }))?;
                }
            }
        }

        let measurement = |task: TaskKind| {
            measured.iter().find_map(|(id, ev, spec)| match &ev.prediction {
                Prediction::Measurement(m) if ev.task == task => Some((*id, m.clone(), ev, spec)),
                _ => None,
            })
        };
        let mut ga = measurement(TaskKind::Ga).map(|(_, m, _, _)| m.value);
        if ga.is_none() {
            if let (Some((hc_id, hc, _, _)), Some(chart)) = (measurement(TaskKind::Hc), self.charts.get(ChartMeasure::Hc)) {
                if let Ok(weeks) = invert_growth_curve(chart, hc.value) {
                    let m = Measurement::new(weeks, Unit::Weeks, "hc_chart_inversion")?;
                    bank.append(EvidenceItem::Finding(VerifiedFinding::unchecked(TaskKind::Ga, m, Some(hc_id))))?;
                    ga = Some(weeks);
                }
            }
        }

        if let Some(ga) = ga.filter(|_| !self.charts.is_empty()) {
            let mut findings = Vec::new();
            let mut fallbacks = FallbackMasks::default();
            for task in [TaskKind::Hc, TaskKind::Ac] {
                if let Some((id, m, ev, spec)) = measurement(task) {
                    findings.push(VerifiedFinding::unchecked(task, m, Some(id)));
                    fallbacks.by_task.push((task, ev.tool_masks(&spec.priority_order())));
                }
            }
            let (verified, _) = consistency_check_and_reflect(&findings, ga, &self.charts, &fallbacks, &self.reflection)?;
            for f in verified {
                if f.status != FindingStatus::NotChecked {
                    bank.append(EvidenceItem::Finding(f))?;
                }
            }
        }
        Ok(FrameAnalysis { ga_weeks: ga })
    }

    fn plane_of(&self, image: &ImageRef) -> Result<ToolEvidence> {
        let planes: Vec<&ExpertSpec> = self.experts.iter().filter(|e| e.task == TaskKind::StandardPlane).collect();
        if planes.is_empty() {
            return Err(Error::NoMatchingExpert(TaskKind::StandardPlane.to_string()));
        }
        let mut last = None;
        for (_, r) in self.run_experts(&planes, image, false) {
            match r {
                Ok(ev) if ev.prediction.label().is_some() => return Ok(ev),
                Ok(_) => {}
                Err(e) => last = Some(e),
            }
        }
        Err(last.unwrap_or_else(|| Error::AllToolsFailed(planes[0].id.clone())))
    }

    /// General requests carry little content, so the recognised planes and
    /// the tasks they trigger are appended to the retrieval query.
    fn general_retrieval_text<'a>(&self, query_text: &str, planes: impl IntoIterator<Item = &'a str>) -> String {
        let mut text = query_text.to_string();
        let mut seen = std::collections::BTreeSet::new();
        for p in planes {
            if !seen.insert(p) {
                continue;
            }
            text.push_str(&format!(" {p} plane"));
            for t in self.captions.tasks_for(p) {
                text.push(' ');
                text.push_str(t.display_name());
            }
        }
        text
    }

    pub fn caption_image(&self, image: &ImageRef) -> Result<GeneralOutcome> {
        self.caption_image_for(image, &image.id, CAPTION_QUERY)
    }

    /// Plane recognition, plane-conditional experts, chart check with
    /// reflection, then a report over a general-task bank.
    pub fn caption_image_for(&self, image: &ImageRef, query_id: &str, query_text: &str) -> Result<GeneralOutcome> {
        let plane = self.plane_of(image)?;
        let label = plane.prediction.label().unwrap_or_default().to_string();
        let mut bank = EvidenceBank::new(format!("caption:{query_id}"), BankMode::GeneralTask);
        bank.append(EvidenceItem::Analysis(GeneralContext {
            query_id: query_id.to_string(),
            subtask: GeneralTask::Caption,
            source_id: image.id.clone(),
            frame_index: None,
            plane: Some(label.clone()),
        }))?;
        bank.append(EvidenceItem::Tool(plane))?;
        self.analyse_plane(&mut bank, image, &label, None)?;
        let text = self.general_retrieval_text(query_text, [label.as_str()]);
        self.retrieve_into(&mut bank, &text, true)?;
        let snap = bank.snapshot();
        let report = self.finish_report(&snap, ReportSubject::Caption, query_id)?;
        Ok(GeneralOutcome { report, bank: snap })
    }

    fn scorer(&self) -> Result<String> {
        if let Some(s) = &self.keyframes.scorer {
            return Ok(s.clone());
        }
        self.experts
            .iter()
            .find(|e| e.task == TaskKind::StandardPlane)
            .map(|e| e.priority_order()[0].clone())
            .ok_or_else(|| Error::NoMatchingExpert("no plane expert to score keyframes".into()))
    }

    pub fn summarize_video(&self, video: &VideoRef) -> Result<GeneralOutcome> {
        self.summarize_video_for(video, &video.id, VIDEO_QUERY)
    }

    /// Keyframes, per-keyframe plane analysis, optional GA cross-check,
    /// then a sequence-level report.
    pub fn summarize_video_for(&self, video: &VideoRef, query_id: &str, query_text: &str) -> Result<GeneralOutcome> {
        if video.frames().is_empty() {
            return Err(Error::EmptyVideo);
        }
        let scorer = self.scorer()?;
        let ks = extract_keyframes(&self.registry, video, &scorer, &self.keyframes, &self.captions)?;
        let mut bank = EvidenceBank::new(format!("video:{query_id}"), BankMode::GeneralTask);
        bank.append(EvidenceItem::Analysis(GeneralContext {
            query_id: query_id.to_string(),
            subtask: GeneralTask::VideoSummary,
            source_id: video.id.clone(),
            frame_index: None,
            plane: None,
        }))?;
        bank.append(EvidenceItem::Keyframes(ks.clone()))?;

        let mut best_ga: Option<(f64, f64)> = None;
        for k in &ks.frames {
            let frame = &video.frames()[k.frame_index];
            bank.append(EvidenceItem::Analysis(GeneralContext {
                query_id: query_id.to_string(),
                subtask: GeneralTask::VideoSummary,
                source_id: frame.id.clone(),
                frame_index: Some(k.frame_index),
                plane: Some(k.label.clone()),
            }))?;
            let a = self.analyse_plane(&mut bank, frame, &k.label, Some(k.frame_index))?;
            if let Some(ga) = a.ga_weeks {
                if best_ga.is_none_or(|(s, _)| k.score > s) {
                    best_ga = Some((k.score, ga));
                }
            }
        }
        if let (Some(lmp), Some((_, ga))) = (&self.lmp, best_ga) {
            bank.append(EvidenceItem::GaCrossCheck(ga_cross_check(ga, lmp)))?;
        }
        let text = self.general_retrieval_text(query_text, ks.frames.iter().map(|k| k.label.as_str()));
        self.retrieve_into(&mut bank, &text, true)?;
        let snap = bank.snapshot();
        let report = self.finish_report(&snap, ReportSubject::VideoSummary, query_id)?;
        Ok(GeneralOutcome { report, bank: snap })
    }
}
