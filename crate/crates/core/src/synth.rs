//! Deterministic synthetic world for tests, demos and the `synth` command:
//! rendered scenes, per-tool fixtures, scripted voters, growth charts,
//! knowledge notes, a small benchmark and a short video.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bench::{generate_benchmark, LabelFixture, Templates, VqaItem};
use crate::deliberation::{AgentRole, ScriptedBackend, TextBackend, VoterProfile};
use crate::error::{Error, Result};
use crate::evidence::{Document, Embedder, VectorIndex, DEFAULT_CHUNK_OVERLAP, DEFAULT_CHUNK_SIZE};
use crate::fusion::{ramanujan_perimeter, EllipseParams, FusionRule};
use crate::orchestration::ExpertSpec;
use crate::reporting::{invert_growth_curve, ChartMeasure, ChartRow, GrowthChart, GrowthCharts};
use crate::toolkit::wire::InferResponse;
use crate::toolkit::{Adapter, FixtureStore, ToolOutput, ToolPayload, ToolRegistry};
use crate::types::{ImageRef, Mask, Measurement, TaskKind, Unit, VideoRef};
use crate::workflows::{Engine, LmpConfig};

pub const KNOWLEDGE: [(&str, &str); 6] = [
    ("abdominal_biometry.md", include_str!("../assets/knowledge/abdominal_biometry.md")),
    ("brain_planes.md", include_str!("../assets/knowledge/brain_planes.md")),
    ("gestational_age.md", include_str!("../assets/knowledge/gestational_age.md")),
    ("head_biometry.md", include_str!("../assets/knowledge/head_biometry.md")),
    ("intrapartum.md", include_str!("../assets/knowledge/intrapartum.md")),
    ("standard_planes.md", include_str!("../assets/knowledge/standard_planes.md")),
];

pub const PLANES: [&str; 4] = ["abdomen", "brain", "femur", "thorax"];
pub const SUBPLANES: [&str; 3] = ["trans-thalamic", "trans-cerebellar", "trans-ventricular"];
const SEMI_MAJOR_PX: f64 = 48.0;
const CORRUPT_GA_WEEKS: f64 = 12.0;
const CORRUPT_AOP_DEG: f64 = 40.0;

/// Tool families: (prefix, registered task).
pub const TOOL_FAMILIES: [(&str, TaskKind); 7] = [
    ("plane_cls", TaskKind::StandardPlane),
    ("brain_cls", TaskKind::BrainSubplane),
    ("head_seg", TaskKind::HeadSeg),
    ("abdomen_seg", TaskKind::AbdomenSeg),
    ("stomach_seg", TaskKind::StomachSeg),
    ("aop_reg", TaskKind::Aop),
    ("ga_reg", TaskKind::Ga),
];
pub const TOOL_VARIANTS: [&str; 3] = ["a", "b", "c"];

pub fn tool_ids(prefix: &str) -> Vec<String> {
    TOOL_VARIANTS.iter().map(|v| format!("{prefix}_{v}")).collect()
}

/// Hadlock-shaped synthetic HC mean in mm.
pub fn synthetic_hc_mean(ga: f64) -> f64 {
    350.0 * (1.0 - (-(ga - 8.0) / 18.0).exp())
}

pub fn synthetic_ac_mean(ga: f64) -> f64 {
    420.0 * (1.0 - (-(ga - 9.0) / 22.0).exp())
}

/// Monotone HC and AC charts on weeks 14..=40.
pub fn synthetic_charts() -> GrowthCharts {
    let rows = |f: fn(f64) -> f64| -> Vec<ChartRow> {
        (14..=40)
            .map(|w| {
                let ga = w as f64;
                let mean = f(ga);
                ChartRow {
                    ga_weeks: ga,
                    mean_mm: mean,
                    sd_mm: 0.035 * mean + 2.0,
                }
            })
            .collect()
    };
    let mut c = GrowthCharts::new();
    c.insert(GrowthChart::new(ChartMeasure::Hc, rows(synthetic_hc_mean), "synthetic").expect("monotone chart"));
    c.insert(GrowthChart::new(ChartMeasure::Ac, rows(synthetic_ac_mean), "synthetic").expect("monotone chart"));
    c
}

/// The expert lineup used by the synthetic world.
pub fn default_experts() -> Vec<ExpertSpec> {
    let e = |id: &str, task, prefix: &str, fusion| ExpertSpec {
        id: id.to_string(),
        task,
        tools: tool_ids(prefix),
        fusion,
        priority: Vec::new(),
    };
    vec![
        e("plane_expert", TaskKind::StandardPlane, "plane_cls", FusionRule::AgreementFusion),
        e("brain_expert", TaskKind::BrainSubplane, "brain_cls", FusionRule::LabelMajorityVote),
        e("head_seg_expert", TaskKind::HeadSeg, "head_seg", FusionRule::PixelMajorityVote),
        e("hc_expert", TaskKind::Hc, "head_seg", FusionRule::EllipseBiometryMajority),
        e("abdomen_seg_expert", TaskKind::AbdomenSeg, "abdomen_seg", FusionRule::PixelMajorityVote),
        e("ac_expert", TaskKind::Ac, "abdomen_seg", FusionRule::EllipseBiometryMajority),
        e("stomach_expert", TaskKind::StomachSeg, "stomach_seg", FusionRule::MaskMajorityArea),
        e("aop_expert", TaskKind::Aop, "aop_reg", FusionRule::MedianOutlierCorrect),
        e("ga_expert", TaskKind::Ga, "ga_reg", FusionRule::ConsistencyWeighted),
    ]
}

pub fn label_response(tool: &str, task: TaskKind, label: &str, score: f64, classes: &[&str]) -> InferResponse {
    let mut scores = BTreeMap::new();
    let others: Vec<&str> = classes.iter().copied().filter(|c| *c != label).collect();
    if others.is_empty() {
        scores.insert(label.to_string(), 1.0);
    } else {
        let rest = (1.0 - score) / others.len() as f64;
        for o in others {
            scores.insert(o.to_string(), rest);
        }
        let sum_rest: f64 = scores.values().sum();
        scores.insert(label.to_string(), 1.0 - sum_rest);
    }
    to_wire(tool, task, ToolPayload::Label {
        label: label.to_string(),
        scores,
    })
}

pub fn mask_response(tool: &str, task: TaskKind, mask: &Mask) -> InferResponse {
    to_wire(tool, task, ToolPayload::Mask(mask.clone()))
}

pub fn scalar_response(tool: &str, task: TaskKind, value: f64, unit: Unit) -> InferResponse {
    let m = Measurement::new(value, unit, tool).expect("finite synthetic value");
    to_wire(tool, task, ToolPayload::Scalar(m))
}

fn to_wire(tool: &str, task: TaskKind, payload: ToolPayload) -> InferResponse {
    InferResponse::from_output(&ToolOutput {
        tool_id: tool.to_string(),
        task,
        payload,
        latency_ms: 5.0,
    })
    .expect("synthetic output encodes")
}

/// Ground truth of one synthetic image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub id: String,
    /// Standard-plane label, `other` for non-plane images.
    pub plane: String,
    #[serde(default)]
    pub subplane: Option<String>,
    pub spacing_mm_per_px: f64,
    #[serde(default)]
    pub head: Option<EllipseParams>,
    #[serde(default)]
    pub abdomen: Option<EllipseParams>,
    #[serde(default)]
    pub stomach: Option<EllipseParams>,
    #[serde(default)]
    pub ga_weeks: Option<f64>,
    #[serde(default)]
    pub aop_deg: Option<f64>,
    pub plane_score: f64,
}

impl Scene {
    pub fn hc_mm(&self) -> Option<f64> {
        self.head.map(|e| ramanujan_perimeter(e.a, e.b) * self.spacing_mm_per_px)
    }

    pub fn ac_mm(&self) -> Option<f64> {
        self.abdomen.map(|e| ramanujan_perimeter(e.a, e.b) * self.spacing_mm_per_px)
    }

    /// Stomach area of the rasterized ground-truth mask, cm².
    pub fn stomach_cm2(&self, size: u32) -> Option<f64> {
        self.stomach.map(|e| {
            let m = e.rasterize(size, size, self.spacing_mm_per_px).expect("valid raster");
            m.area_mm2() / 100.0
        })
    }
}

fn centred_ellipse(rng: &mut ChaCha8Rng, size: u32, ratio: (f64, f64)) -> (f64, f64, f64, f64) {
    let c = size as f64 / 2.0;
    let r = rng.gen_range(ratio.0..ratio.1);
    (
        c + rng.gen_range(-3.0..3.0),
        c + rng.gen_range(-3.0..3.0),
        r,
        rng.gen_range(0.0..std::f64::consts::PI),
    )
}

/// Brain-plane scene whose head outline has circumference `hc_mm`.
pub fn head_scene(id: &str, hc_mm: f64, ga: f64, subplane: &str, size: u32, rng: &mut ChaCha8Rng) -> Scene {
    let (cx, cy, r, th) = centred_ellipse(rng, size, (0.78, 0.88));
    let b = SEMI_MAJOR_PX * r;
    let spacing = hc_mm / ramanujan_perimeter(SEMI_MAJOR_PX, b);
    Scene {
        id: id.to_string(),
        plane: "brain".into(),
        subplane: Some(subplane.to_string()),
        spacing_mm_per_px: spacing,
        head: Some(EllipseParams::new(cx, cy, SEMI_MAJOR_PX, b, th).expect("valid axes")),
        abdomen: None,
        stomach: None,
        ga_weeks: Some(ga),
        aop_deg: None,
        plane_score: rng.gen_range(0.85..0.95),
    }
}

/// Abdominal scene with circumference `ac_mm` and a stomach of roughly
/// `stomach_cm2`.
pub fn abdomen_scene(id: &str, ac_mm: f64, stomach_cm2: f64, ga: f64, size: u32, rng: &mut ChaCha8Rng) -> Scene {
    let (cx, cy, r, th) = centred_ellipse(rng, size, (0.86, 0.95));
    let b = SEMI_MAJOR_PX * r;
    let spacing = ac_mm / ramanujan_perimeter(SEMI_MAJOR_PX, b);
    let area_px = stomach_cm2 * 100.0 / (spacing * spacing);
    let sa = (area_px / (std::f64::consts::PI * 0.6)).sqrt();
    let stomach = EllipseParams::new(cx + 10.0, cy - 6.0, sa, 0.6 * sa, th + 0.4).expect("valid axes");
    Scene {
        id: id.to_string(),
        plane: "abdomen".into(),
        subplane: None,
        spacing_mm_per_px: spacing,
        head: None,
        abdomen: Some(EllipseParams::new(cx, cy, SEMI_MAJOR_PX, b, th).expect("valid axes")),
        stomach: Some(stomach),
        ga_weeks: Some(ga),
        aop_deg: None,
        plane_score: rng.gen_range(0.85..0.95),
    }
}

pub fn plain_scene(id: &str, plane: &str, rng: &mut ChaCha8Rng) -> Scene {
    Scene {
        id: id.to_string(),
        plane: plane.to_string(),
        subplane: None,
        spacing_mm_per_px: 0.5,
        head: None,
        abdomen: None,
        stomach: None,
        ga_weeks: None,
        aop_deg: None,
        plane_score: rng.gen_range(0.85..0.95),
    }
}

/// Grey-level rendering: speckle, bright skull ring, grey abdomen, dark
/// stomach.
pub fn render_scene(scene: &Scene, size: u32, seed: u64) -> Result<ImageRef> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut px = vec![0u8; (size * size) as usize];
    for y in 0..size {
        for x in 0..size {
            let (fx, fy) = (x as f64, y as f64);
            let mut v: f64 = rng.gen_range(15.0..55.0);
            if let Some(h) = scene.head {
                let inner = EllipseParams { a: h.a - 3.0, b: h.b - 3.0, ..h };
                if h.contains(fx, fy) {
                    v = if inner.contains(fx, fy) { v + 40.0 } else { 220.0 };
                }
            }
            if let Some(a) = scene.abdomen {
                if a.contains(fx, fy) {
                    v += 60.0;
                }
            }
            if let Some(s) = scene.stomach {
                if s.contains(fx, fy) {
                    v = 8.0;
                }
            }
            if let Some(deg) = scene.aop_deg {
                let t = deg.to_radians();
                let (dx, dy) = (fx - 20.0, fy - (size as f64 - 20.0));
                let along = dx * t.cos() - dy * t.sin();
                let across = dx * t.sin() + dy * t.cos();
                if along > 0.0 && across.abs() < 2.0 {
                    v = 200.0;
                }
            }
            px[(y * size + x) as usize] = v.clamp(0.0, 255.0) as u8;
        }
    }
    ImageRef::new(scene.id.clone(), size, size, px, scene.spacing_mm_per_px, "synthetic")
}

/// A copy of `m` shifted by (dx, dy) pixels.
pub fn shifted(m: &Mask, dx: i64, dy: i64) -> Mask {
    let (w, h) = m.dims();
    Mask::from_fn(w, h, m.spacing_mm_per_px, |x, y| {
        let (sx, sy) = (x as i64 - dx, y as i64 - dy);
        sx >= 0 && sy >= 0 && (sx as u32) < w && (sy as u32) < h && m.get(sx as u32, sy as u32)
    })
    .expect("same geometry")
}

fn wrong_class<'a>(classes: &[&'a str], truth: &str) -> &'a str {
    let i = classes.iter().position(|c| *c == truth).unwrap_or(0);
    classes[(i + 1) % classes.len()]
}

/// Per-tool responses for a scene. With `corrupt`, the third tool of each
/// family returns a wrong label, a displaced mask or a gross outlier.
pub fn scene_responses(scene: &Scene, size: u32, corrupt: bool, seed: u64) -> Result<Vec<(String, InferResponse)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let ids = |prefix: &str| tool_ids(prefix);
    let bad = |i: usize| corrupt && i == 2;
    if PLANES.contains(&scene.plane.as_str()) || scene.plane == "intrapartum" {
        for (i, t) in ids("plane_cls").iter().enumerate() {
            let label = if bad(i) { wrong_class(&PLANES, &scene.plane) } else { scene.plane.as_str() };
            out.push((t.clone(), label_response(t, TaskKind::StandardPlane, label, scene.plane_score, &PLANES)));
        }
    }
    if let Some(sub) = &scene.subplane {
        for (i, t) in ids("brain_cls").iter().enumerate() {
            let label = if bad(i) { wrong_class(&SUBPLANES, sub) } else { sub.as_str() };
            out.push((t.clone(), label_response(t, TaskKind::BrainSubplane, label, 0.9, &SUBPLANES)));
        }
    }
    let masks = |prefix: &str, task: TaskKind, e: &EllipseParams, out: &mut Vec<(String, InferResponse)>| -> Result<()> {
        let m = e.rasterize(size, size, scene.spacing_mm_per_px)?;
        for (i, t) in ids(prefix).iter().enumerate() {
            let mm = if bad(i) { shifted(&m, 30, 22) } else { m.clone() };
            out.push((t.clone(), mask_response(t, task, &mm)));
        }
        Ok(())
    };
    if let Some(h) = &scene.head {
        masks("head_seg", TaskKind::HeadSeg, h, &mut out)?;
    }
    if let Some(a) = &scene.abdomen {
        masks("abdomen_seg", TaskKind::AbdomenSeg, a, &mut out)?;
    }
    if let Some(s) = &scene.stomach {
        masks("stomach_seg", TaskKind::StomachSeg, s, &mut out)?;
    }
    if let Some(ga) = scene.ga_weeks.filter(|_| scene.head.is_some()) {
        for (i, t) in ids("ga_reg").iter().enumerate() {
            let v = if bad(i) { ga + CORRUPT_GA_WEEKS } else { ga + rng.gen_range(-0.05..0.05) };
            out.push((t.clone(), scalar_response(t, TaskKind::Ga, v, Unit::Weeks)));
        }
    }
    if let Some(aop) = scene.aop_deg {
        for (i, t) in ids("aop_reg").iter().enumerate() {
            let v = if bad(i) { aop + CORRUPT_AOP_DEG } else { aop + rng.gen_range(-0.3..0.3) };
            out.push((t.clone(), scalar_response(t, TaskKind::Aop, v, Unit::Degrees)));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoterScript {
    /// Every voter picks the answer.
    Correct,
    /// Every voter errs on measurement items and is right elsewhere.
    WrongOnMeasurement,
    /// Three voters right, two wrong.
    Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    /// Labelled images per task family.
    pub per_family: usize,
    pub corrupt: bool,
    pub voters: VoterScript,
    pub image_size: u32,
    pub video_frames: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            per_family: 3,
            corrupt: false,
            voters: VoterScript::Correct,
            image_size: 128,
            video_frames: 60,
        }
    }
}

/// Everything generated for one seed.
#[derive(Debug, Clone)]
pub struct SynthWorld {
    pub config: SynthConfig,
    pub scenes: BTreeMap<String, Scene>,
    pub images: BTreeMap<String, ImageRef>,
    /// tool id -> fixtures
    pub fixtures: BTreeMap<String, FixtureStore>,
    pub experts: Vec<ExpertSpec>,
    pub families: BTreeMap<TaskKind, Vec<LabelFixture>>,
    pub items: Vec<VqaItem>,
    pub backend: ScriptedBackend,
    pub charts: GrowthCharts,
    pub knowledge: Vec<Document>,
    pub video: VideoRef,
    /// Ground-truth plane peaks of the video as (frame, label).
    pub video_peaks: Vec<(usize, String)>,
    pub lmp: LmpConfig,
}

/// Centre of a bin with a random offset kept `margin` away from its edges.
fn bin_centred(rng: &mut ChaCha8Rng, around: f64, interval: f64, margin: f64) -> f64 {
    let lo = (around / interval).floor() * interval;
    lo + rng.gen_range(margin..interval - margin)
}

fn voter_reply(profile: VoterProfile, key: &str) -> String {
    let why = match profile {
        VoterProfile::StructureSpecialist => "The visible anatomy fits this option best.",
        VoterProfile::EvidenceSpecialist => "The image findings support this choice.",
        VoterProfile::EliminationReasoner => "The other options are less consistent with the image.",
        VoterProfile::UncertaintyReviewer => "This is the most likely option despite some uncertainty.",
        VoterProfile::IntegratedJudgement => "Taken together the evidence favours this option.",
    };
    format!("Answer: ({key}) {why}")
}

fn shift_key(options: usize, key: &str) -> String {
    let i = (key.as_bytes()[0] - b'A') as usize;
    crate::types::option_key((i + 1) % options)
}

impl SynthWorld {
    pub fn generate(config: SynthConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let size = config.image_size;
        let charts = synthetic_charts();
        let hc_chart = charts.get(ChartMeasure::Hc).expect("hc chart");
        let ac_chart = charts.get(ChartMeasure::Ac).expect("ac chart");
        let mut scenes: Vec<Scene> = Vec::new();
        let mut families: BTreeMap<TaskKind, Vec<LabelFixture>> = BTreeMap::new();
        let fixture = |image: &str, label: Option<&str>, value: Option<f64>| LabelFixture {
            image: image.to_string(),
            label: label.map(str::to_string),
            value,
        };
        let n = config.per_family;
        let stomach_default = |rng: &mut ChaCha8Rng| rng.gen_range(1.2..2.4);

        for i in 0..n {
            let id = format!("ac_{:03}", i + 1);
            let ga0 = rng.gen_range(20.0..36.0);
            let ac = bin_centred(&mut rng, synthetic_ac_mean(ga0), 10.0, 3.0);
            let ga = invert_growth_curve(ac_chart, ac)?;
            let st = stomach_default(&mut rng);
            let s = abdomen_scene(&id, ac, st, ga, size, &mut rng);
            families.entry(TaskKind::Ac).or_default().push(fixture(&id, None, s.ac_mm()));
            scenes.push(s);
        }
        for i in 0..n {
            let id = format!("aop_{:03}", i + 1);
            let around = rng.gen_range(95.0..150.0);
            let aop = bin_centred(&mut rng, around, 10.0, 2.5);
            let mut s = plain_scene(&id, "intrapartum", &mut rng);
            s.aop_deg = Some(aop);
            families.entry(TaskKind::Aop).or_default().push(fixture(&id, None, Some(aop)));
            scenes.push(s);
        }
        for i in 0..n {
            let id = format!("brain_{:03}", i + 1);
            let sub = SUBPLANES[i % SUBPLANES.len()];
            let ga = rng.gen_range(18.0..34.0);
            let s = head_scene(&id, synthetic_hc_mean(ga), ga, sub, size, &mut rng);
            families.entry(TaskKind::BrainSubplane).or_default().push(fixture(&id, Some(sub), None));
            scenes.push(s);
        }
        for i in 0..n {
            let id = format!("plane_{:03}", i + 1);
            let plane = PLANES[i % PLANES.len()];
            let ga = rng.gen_range(20.0..34.0);
            let s = match plane {
                "brain" => head_scene(&id, synthetic_hc_mean(ga), ga, "trans-thalamic", size, &mut rng),
                "abdomen" => {
                    let st = stomach_default(&mut rng);
                    abdomen_scene(&id, synthetic_ac_mean(ga), st, ga, size, &mut rng)
                }
                p => plain_scene(&id, p, &mut rng),
            };
            families.entry(TaskKind::StandardPlane).or_default().push(fixture(&id, Some(plane), None));
            scenes.push(s);
        }
        for i in 0..n {
            let id = format!("ga_{:03}", i + 1);
            let around = rng.gen_range(18.0..35.0);
            let ga = bin_centred(&mut rng, around, 2.0, 0.6);
            let s = head_scene(&id, synthetic_hc_mean(ga), ga, "trans-thalamic", size, &mut rng);
            families.entry(TaskKind::Ga).or_default().push(fixture(&id, None, Some(ga)));
            scenes.push(s);
        }
        for i in 0..n {
            let id = format!("hc_{:03}", i + 1);
            let ga0 = rng.gen_range(18.0..34.0);
            let hc = bin_centred(&mut rng, synthetic_hc_mean(ga0), 10.0, 3.0);
            let ga = invert_growth_curve(hc_chart, hc)?;
            let s = head_scene(&id, hc, ga, "trans-thalamic", size, &mut rng);
            families.entry(TaskKind::Hc).or_default().push(fixture(&id, None, s.hc_mm()));
            scenes.push(s);
        }
        for i in 0..n {
            let id = format!("stomach_{:03}", i + 1);
            let ga = rng.gen_range(27.0..36.0);
            let around = rng.gen_range(1.0..3.9);
            let target = bin_centred(&mut rng, around, 1.0, 0.3);
            let s = abdomen_scene(&id, synthetic_ac_mean(ga), target, ga, size, &mut rng);
            families
                .entry(TaskKind::StomachSeg)
                .or_default()
                .push(fixture(&id, None, s.stomach_cm2(size)));
            scenes.push(s);
        }

        let items = generate_benchmark(&families, &Templates::default(), config.seed)?;

        let mut backend = ScriptedBackend::new();
        for it in &items {
            let wrong = shift_key(it.options.len(), &it.answer);
            for (k, p) in VoterProfile::ALL.into_iter().enumerate() {
                let key = match config.voters {
                    VoterScript::Correct => &it.answer,
                    VoterScript::WrongOnMeasurement if it.task_id.is_measurement() => &wrong,
                    VoterScript::WrongOnMeasurement => &it.answer,
                    VoterScript::Split if k < 3 => &it.answer,
                    VoterScript::Split => &wrong,
                };
                backend.insert(AgentRole::Voter(p), &it.id, voter_reply(p, key));
            }
        }

        // Video: brain, abdomen and femur sweeps separated by non-plane frames.
        let nf = config.video_frames.max(24);
        let segs = [
            ("brain", nf * 2 / 24, nf * 8 / 24, nf * 5 / 24),
            ("abdomen", nf * 10 / 24, nf * 17 / 24, nf * 14 / 24),
            ("femur", nf * 19 / 24, nf, nf * 22 / 24),
        ];
        let vid = "video_001";
        let video_ga = rng.gen_range(22.0..30.0);
        let mut frames = Vec::with_capacity(nf);
        let mut video_scenes = Vec::new();
        let mut scorer_labels = Vec::new();
        for f in 0..nf {
            let id = format!("{vid}-f{f:03}");
            let seg = segs.iter().find(|(_, lo, hi, _)| f >= *lo && f < *hi);
            let (scene, score) = match seg {
                Some((plane, _, _, peak)) => {
                    let d = (f as f64 - *peak as f64) / 3.0;
                    let score = 0.55 + 0.4 * (-d * d).exp();
                    let s = match *plane {
                        "brain" => head_scene(&id, synthetic_hc_mean(video_ga), video_ga, "trans-thalamic", size, &mut rng),
                        "abdomen" => {
                            let st = stomach_default(&mut rng);
                            abdomen_scene(&id, synthetic_ac_mean(video_ga), st, video_ga, size, &mut rng)
                        }
                        p => plain_scene(&id, p, &mut rng),
                    };
                    (s, score)
                }
                None => (plain_scene(&id, "other", &mut rng), rng.gen_range(0.5..0.7)),
            };
            scorer_labels.push((scene.plane.clone(), score));
            frames.push(render_scene(&scene, size, config.seed ^ (f as u64 + 1) << 20)?);
            video_scenes.push(scene);
        }
        let video = VideoRef::new(vid, frames, 25.0)?;
        let video_peaks: Vec<(usize, String)> = segs.iter().map(|(p, _, _, k)| (*k, p.to_string())).collect();

        let mut fixtures: BTreeMap<String, FixtureStore> = BTreeMap::new();
        for (prefix, _) in TOOL_FAMILIES {
            for t in tool_ids(prefix) {
                fixtures.insert(t, FixtureStore::new());
            }
        }
        let mut images = BTreeMap::new();
        for (k, s) in scenes.iter().enumerate() {
            let seed = config.seed.wrapping_add(1000 + k as u64);
            images.insert(s.id.clone(), render_scene(s, size, seed)?);
            for (tool, resp) in scene_responses(s, size, config.corrupt, seed)? {
                fixtures.get_mut(&tool).expect("known tool").insert(s.id.clone(), resp);
            }
        }
        let scorer = &tool_ids("plane_cls")[0];
        for (f, s) in video_scenes.iter().enumerate() {
            let (label, score) = &scorer_labels[f];
            let classes: Vec<&str> = PLANES.iter().copied().chain(["other"]).collect();
            fixtures
                .get_mut(scorer)
                .expect("scorer")
                .insert(s.id.clone(), label_response(scorer, TaskKind::StandardPlane, label, *score, &classes));
            if video_peaks.iter().any(|(k, _)| *k == f) {
                let seed = config.seed.wrapping_add(5000 + f as u64);
                for (tool, resp) in scene_responses(s, size, config.corrupt, seed)? {
                    if tool != *scorer {
                        fixtures.get_mut(&tool).expect("known tool").insert(s.id.clone(), resp);
                    }
                }
            }
        }

        let exam = NaiveDate::from_ymd_opt(2026, 3, 2).expect("valid date");
        let lmp = LmpConfig {
            lmp_date: exam - chrono::Duration::days((video_ga * 7.0).round() as i64 + 3),
            exam_date: exam,
            tolerance_weeks: crate::workflows::DEFAULT_GA_TOLERANCE_WEEKS,
        };

        let mut scene_map: BTreeMap<String, Scene> = scenes.into_iter().map(|s| (s.id.clone(), s)).collect();
        scene_map.extend(video_scenes.into_iter().map(|s| (s.id.clone(), s)));
        Ok(Self {
            config,
            scenes: scene_map,
            images,
            fixtures,
            experts: default_experts(),
            families,
            items,
            backend,
            charts,
            knowledge: KNOWLEDGE.iter().map(|(id, t)| Document::new(*id, *t)).collect(),
            video,
            video_peaks,
            lmp,
        })
    }

    pub fn registry(&self) -> Result<ToolRegistry> {
        let mut reg = ToolRegistry::new();
        for (prefix, task) in TOOL_FAMILIES {
            for t in tool_ids(prefix) {
                let store = self.fixtures.get(&t).cloned().unwrap_or_default();
                reg.register(t, task, Adapter::InProcess(Arc::new(store)))?;
            }
        }
        Ok(reg)
    }

    pub fn index(&self) -> Result<VectorIndex> {
        VectorIndex::from_documents(Embedder::default(), &self.knowledge, DEFAULT_CHUNK_SIZE, DEFAULT_CHUNK_OVERLAP)
    }

    /// An engine wired to this world's tools, voters, charts and knowledge.
    pub fn engine(&self) -> Result<Engine> {
        let mut e = Engine::new(self.registry()?, self.experts.clone());
        e.backend = TextBackend::Scripted(self.backend.clone());
        e.charts = self.charts.clone();
        e.index = Some(self.index()?);
        e.lmp = Some(self.lmp.clone());
        Ok(e)
    }

    pub fn image(&self, id: &str) -> Result<ImageRef> {
        self.images
            .get(id)
            .cloned()
            .ok_or_else(|| Error::invalid(format!("no synthetic image {id:?}")))
    }

    /// Writes a self-contained working directory usable by the CLI.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        let mk = |p: &Path| std::fs::create_dir_all(p).map_err(|e| Error::io(p, e));
        let write = |p: &Path, text: String| std::fs::write(p, text).map_err(|e| Error::io(p, e));
        mk(dir)?;
        for (tool, store) in &self.fixtures {
            store.save_dir(&dir.join("tools").join(tool))?;
        }
        let img_dir = dir.join("images");
        mk(&img_dir)?;
        for (id, img) in &self.images {
            write(&img_dir.join(format!("{id}.json")), serde_json::to_string(img)?)?;
        }
        let vid_dir = dir.join("video").join(&self.video.id);
        mk(&vid_dir)?;
        for f in self.video.frames() {
            write(&vid_dir.join(format!("{}.json", f.id)), serde_json::to_string(f)?)?;
        }
        crate::bench::save_items(&dir.join("benchmark.json"), &self.items)?;
        write(&dir.join("labels.json"), serde_json::to_string_pretty(&self.families)?)?;
        self.backend.save(&dir.join("voters.json"))?;
        write(&dir.join("charts.csv"), self.charts.to_csv())?;
        let kdir = dir.join("knowledge");
        mk(&kdir)?;
        for d in &self.knowledge {
            write(&kdir.join(&d.id), d.text.clone())?;
        }
        write(&dir.join("fetalscope.toml"), self.config_toml())?;
        Ok(())
    }

    fn config_toml(&self) -> String {
        let mut s = String::new();
        s.push_str("# Generated by `fetalscope synth`.\n\n");
        s.push_str("charts = \"charts.csv\"\nimages_dir = \"images\"\n\n");
        s.push_str("[rag]\nknowledge_dir = \"knowledge\"\n\n");
        s.push_str("[backend]\nmode = \"scripted\"\nscript = \"voters.json\"\n\n");
        s.push_str(&format!(
            "[lmp]\nlmp_date = \"{}\"\nexam_date = \"{}\"\n\n",
            self.lmp.lmp_date, self.lmp.exam_date
        ));
        for (prefix, task) in TOOL_FAMILIES {
            for t in tool_ids(prefix) {
                s.push_str(&format!(
                    "[[tools]]\nid = \"{t}\"\ntask = \"{task}\"\nfixtures = \"tools/{t}\"\n\n"
                ));
            }
        }
        for e in &self.experts {
            let tools: Vec<String> = e.tools.iter().map(|t| format!("\"{t}\"")).collect();
            s.push_str(&format!(
                "[[experts]]\nid = \"{}\"\ntask = \"{}\"\ntools = [{}]\nfusion = \"{}\"\n\n",
                e.id,
                e.task,
                tools.join(", "),
                e.fusion
            ));
        }
        s
    }
}

/// Label fixtures with the item counts of the released benchmark families.
pub fn full_size_families() -> BTreeMap<TaskKind, Vec<LabelFixture>> {
    let sizes = [
        (TaskKind::Ac, 187),
        (TaskKind::Aop, 64),
        (TaskKind::BrainSubplane, 569),
        (TaskKind::StandardPlane, 233),
        (TaskKind::Ga, 511),
        (TaskKind::Hc, 75),
        (TaskKind::StomachSeg, 253),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    sizes
        .into_iter()
        .map(|(kind, n)| {
            let fx = (0..n)
                .map(|i| {
                    let image = format!("{kind}_{i:04}");
                    match kind {
                        TaskKind::BrainSubplane => LabelFixture {
                            image,
                            label: Some(SUBPLANES[i % 3].into()),
                            value: None,
                        },
                        TaskKind::StandardPlane => LabelFixture {
                            image,
                            label: Some(PLANES[i % 4].into()),
                            value: None,
                        },
                        _ => {
                            let v = match kind {
                                TaskKind::Ac => rng.gen_range(150.0..350.0),
                                TaskKind::Hc => rng.gen_range(150.0..340.0),
                                TaskKind::Aop => rng.gen_range(90.0..160.0),
                                TaskKind::Ga => rng.gen_range(16.0..38.0),
                                _ => rng.gen_range(0.5..6.0),
                            };
                            LabelFixture {
                                image,
                                label: None,
                                value: Some(v),
                            }
                        }
                    }
                })
                .collect();
            (kind, fx)
        })
        .collect()
}
