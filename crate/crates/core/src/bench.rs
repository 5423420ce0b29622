//! Templated multiple-choice VQA benchmark: generation, JSON schema and
//! accuracy / macro-F1 scoring.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{option_key, Attachment, ImageRef, Measurement, OptionItem, Query, TaskKind, Unit};
use crate::workflows::{Ablation, Engine};

/// Benchmark task identifiers with their option arity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TaskId {
    Task1,
    Task2,
    Task3,
    Task4,
    Task5,
    Task6,
    Task7,
    Task8,
    Task9,
    Task10,
}

impl TaskId {
    pub const ALL: [TaskId; 10] = [
        TaskId::Task1,
        TaskId::Task2,
        TaskId::Task3,
        TaskId::Task4,
        TaskId::Task5,
        TaskId::Task6,
        TaskId::Task7,
        TaskId::Task8,
        TaskId::Task9,
        TaskId::Task10,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskId::Task1 => "Task1",
            TaskId::Task2 => "Task2",
            TaskId::Task3 => "Task3",
            TaskId::Task4 => "Task4",
            TaskId::Task5 => "Task5",
            TaskId::Task6 => "Task6",
            TaskId::Task7 => "Task7",
            TaskId::Task8 => "Task8",
            TaskId::Task9 => "Task9",
            TaskId::Task10 => "Task10",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskId::Task1 => "AC",
            TaskId::Task2 => "AoP",
            TaskId::Task3 => "Brain Binary",
            TaskId::Task4 => "Brain Multi",
            TaskId::Task5 => "Plane Binary",
            TaskId::Task6 => "Plane Multi",
            TaskId::Task7 => "GA Binary",
            TaskId::Task8 => "GA Multi",
            TaskId::Task9 => "HC",
            TaskId::Task10 => "Stomach",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            TaskId::Task2 | TaskId::Task3 | TaskId::Task5 | TaskId::Task7 => 2,
            TaskId::Task4 | TaskId::Task8 => 3,
            TaskId::Task1 | TaskId::Task6 | TaskId::Task9 | TaskId::Task10 => 4,
        }
    }

    pub fn kind(self) -> TaskKind {
        match self {
            TaskId::Task1 => TaskKind::Ac,
            TaskId::Task2 => TaskKind::Aop,
            TaskId::Task3 | TaskId::Task4 => TaskKind::BrainSubplane,
            TaskId::Task5 | TaskId::Task6 => TaskKind::StandardPlane,
            TaskId::Task7 | TaskId::Task8 => TaskKind::Ga,
            TaskId::Task9 => TaskKind::Hc,
            TaskId::Task10 => TaskKind::StomachSeg,
        }
    }

    /// Yes/No variant of a classification pair.
    pub fn is_binary_classification(self) -> bool {
        matches!(self, TaskId::Task3 | TaskId::Task5)
    }

    pub fn is_measurement(self) -> bool {
        self.kind().measurement_unit().is_some()
    }

    /// Benchmark tasks built from one labelled fixture family.
    pub fn for_kind(kind: TaskKind) -> Vec<TaskId> {
        Self::ALL.into_iter().filter(|t| t.kind() == kind).collect()
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemMeta {
    pub value: f64,
    pub unit: Unit,
}

/// One benchmark question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VqaItem {
    pub id: String,
    pub image: String,
    pub task_id: TaskId,
    pub question: String,
    pub options: Vec<OptionItem>,
    pub answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<ItemMeta>,
}

impl VqaItem {
    pub fn validate(&self) -> Result<()> {
        if self.options.len() != self.task_id.arity() {
            return Err(Error::invalid(format!(
                "item {} has {} options, {} expects {}",
                self.id,
                self.options.len(),
                self.task_id,
                self.task_id.arity()
            )));
        }
        if !self.options.iter().any(|o| o.key == self.answer) {
            return Err(Error::invalid(format!("item {} answer {:?} is not an option key", self.id, self.answer)));
        }
        Ok(())
    }

    pub fn to_query(&self, image: ImageRef) -> Result<Query> {
        Query::new(
            self.id.clone(),
            self.question.clone(),
            self.options.clone(),
            vec![Attachment::Image(image)],
        )
    }
}

pub fn load_items(path: &Path) -> Result<Vec<VqaItem>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let items: Vec<VqaItem> = serde_json::from_str(&text)?;
    for it in &items {
        it.validate()?;
    }
    Ok(items)
}

pub fn save_items(path: &Path, items: &[VqaItem]) -> Result<()> {
    let text = serde_json::to_string_pretty(items)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn fmt_bound(x: f64) -> String {
    let r = (x * 1e6).round() / 1e6;
    let s = format!("{r:.6}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn render_bin(lo: f64, hi: f64, unit: Unit) -> String {
    match unit {
        Unit::Degrees => format!("{}–{}°", fmt_bound(lo), fmt_bound(hi)),
        u => format!("{}–{} {}", fmt_bound(lo), fmt_bound(hi), u.symbol()),
    }
}

/// `n` contiguous bins of width `interval`, one of which holds the value.
/// The correct bin's position is drawn from `seed`; bins never start below
/// zero.
pub fn discretize_measurement(
    value: &Measurement,
    interval: f64,
    n: usize,
    seed: u64,
) -> Result<(Vec<OptionItem>, String)> {
    if !(interval.is_finite() && interval > 0.0) {
        return Err(Error::invalid("interval must be positive"));
    }
    if !(2..=4).contains(&n) {
        return Err(Error::invalid("option count must be 2, 3 or 4"));
    }
    if value.value < 0.0 {
        return Err(Error::invalid("measurement must be non-negative"));
    }
    let b = (value.value / interval).floor() as i64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_pos = (n as i64 - 1).min(b);
    let pos = rng.gen_range(0..=max_pos) as usize;
    let first = b - pos as i64;
    let options = (0..n)
        .map(|i| {
            let lo = (first + i as i64) as f64 * interval;
            OptionItem::new(option_key(i), render_bin(lo, lo + interval, value.unit))
        })
        .collect();
    Ok((options, option_key(pos)))
}

/// A labelled image: a class name for classification families, a value
/// for measurement families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelFixture {
    pub image: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
}

/// Question stems, class vocabularies and bin widths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Templates {
    pub questions: BTreeMap<TaskId, String>,
    /// (label, option text) pairs; option order is shuffled per item.
    pub brain_classes: Vec<(String, String)>,
    pub plane_classes: Vec<(String, String)>,
    pub intervals: BTreeMap<TaskKind, f64>,
}

impl Default for Templates {
    fn default() -> Self {
        let q = [
            (TaskId::Task1, "What is the abdominal circumference of the fetus in this image?"),
            (TaskId::Task2, "What is the angle of progression in this image?"),
            (TaskId::Task3, "Does this scan represent the {class} plane?"),
            (TaskId::Task4, "Which brain plane is shown in this image?"),
            (TaskId::Task5, "Does this scan represent the fetal {class} standard plane?"),
            (TaskId::Task6, "Which standard plane is shown in this image?"),
            (TaskId::Task7, "What is the estimated gestational age of the fetus?"),
            (TaskId::Task8, "What is the estimated gestational age of the fetus?"),
            (TaskId::Task9, "What is the head circumference of the fetus in this image?"),
            (TaskId::Task10, "What is the area of the stomach in this image?"),
        ];
        let pairs = |v: &[(&str, &str)]| v.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect();
        Self {
            questions: q.into_iter().map(|(t, s)| (t, s.to_string())).collect(),
            brain_classes: pairs(&[
                ("trans-thalamic", "Trans-thalamic"),
                ("trans-cerebellar", "Trans-cerebellar"),
                ("trans-ventricular", "Trans-ventricular"),
            ]),
            plane_classes: pairs(&[
                ("abdomen", "Abdomen"),
                ("brain", "Brain"),
                ("femur", "Femur"),
                ("thorax", "Thorax"),
            ]),
            intervals: [
                (TaskKind::Hc, 10.0),
                (TaskKind::Ac, 10.0),
                (TaskKind::Aop, 10.0),
                (TaskKind::StomachSeg, 1.0),
                (TaskKind::Ga, 2.0),
            ]
            .into_iter()
            .collect(),
        }
    }
}

impl Templates {
    fn classes(&self, kind: TaskKind) -> &[(String, String)] {
        match kind {
            TaskKind::BrainSubplane => &self.brain_classes,
            _ => &self.plane_classes,
        }
    }

    fn question(&self, task: TaskId) -> Result<&str> {
        self.questions
            .get(&task)
            .map(String::as_str)
            .ok_or_else(|| Error::Config(format!("no question template for {task}")))
    }
}

fn item_seed(seed: u64, task: TaskId, index: usize) -> u64 {
    seed ^ (task as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (index as u64).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

/// Items for one benchmark task from a labelled fixture family.
/// Binary classification items are balanced Yes/No; multi-class items list
/// every class in a seeded order; measurement items use
/// [`discretize_measurement`].
pub fn generate_vqa_items(fixtures: &[LabelFixture], task: TaskId, templates: &Templates, seed: u64) -> Result<Vec<VqaItem>> {
    let kind = task.kind();
    let stem = templates.question(task)?;
    let mut yes_draws: Vec<bool> = (0..fixtures.len()).map(|i| i < fixtures.len().div_ceil(2)).collect();
    if task.is_binary_classification() {
        yes_draws.shuffle(&mut ChaCha8Rng::seed_from_u64(item_seed(seed, task, usize::MAX)));
    }
    let mut items = Vec::with_capacity(fixtures.len());
    for (i, fx) in fixtures.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(item_seed(seed, task, i));
        let id = format!("{}-{:04}", task, i + 1);
        let item = if let Some(unit) = kind.measurement_unit() {
            let v = fx.value.ok_or_else(|| Error::MissingLabel(fx.image.clone()))?;
            let interval = *templates
                .intervals
                .get(&kind)
                .ok_or_else(|| Error::Config(format!("no interval for {kind}")))?;
            let m = Measurement::new(v, unit, "ground_truth")?;
            let (options, answer) = discretize_measurement(&m, interval, task.arity(), rng.gen())?;
            VqaItem {
                id,
                image: fx.image.clone(),
                task_id: task,
                question: stem.to_string(),
                options,
                answer,
                meta: Some(ItemMeta { value: v, unit }),
            }
        } else {
            let label = fx.label.as_deref().ok_or_else(|| Error::MissingLabel(fx.image.clone()))?;
            let classes = templates.classes(kind);
            let truth = classes
                .iter()
                .position(|(l, _)| l.eq_ignore_ascii_case(label))
                .ok_or_else(|| Error::invalid(format!("fixture {} has unknown class {label:?}", fx.image)))?;
            if task.is_binary_classification() {
                let named = if yes_draws[i] {
                    truth
                } else {
                    let others: Vec<usize> = (0..classes.len()).filter(|&c| c != truth).collect();
                    *others.choose(&mut rng).expect("at least two classes")
                };
                VqaItem {
                    id,
                    image: fx.image.clone(),
                    task_id: task,
                    question: stem.replace("{class}", &classes[named].0),
                    options: vec![OptionItem::new("A", "Yes"), OptionItem::new("B", "No")],
                    answer: if yes_draws[i] { "A" } else { "B" }.to_string(),
                    meta: None,
                }
            } else {
                let mut order: Vec<usize> = (0..classes.len()).collect();
                order.shuffle(&mut rng);
                let options = order
                    .iter()
                    .enumerate()
                    .map(|(k, &c)| OptionItem::new(option_key(k), classes[c].1.clone()))
                    .collect();
                let pos = order.iter().position(|&c| c == truth).expect("truth is listed");
                VqaItem {
                    id,
                    image: fx.image.clone(),
                    task_id: task,
                    question: stem.to_string(),
                    options,
                    answer: option_key(pos),
                    meta: None,
                }
            }
        };
        item.validate()?;
        items.push(item);
    }
    Ok(items)
}

/// Every benchmark task whose family has fixtures, in task order.
pub fn generate_benchmark(
    families: &BTreeMap<TaskKind, Vec<LabelFixture>>,
    templates: &Templates,
    seed: u64,
) -> Result<Vec<VqaItem>> {
    let mut out = Vec::new();
    for task in TaskId::ALL {
        if let Some(fx) = families.get(&task.kind()) {
            out.extend(generate_vqa_items(fx, task, templates, seed)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemPrediction {
    pub item_id: String,
    pub key: String,
}

pub fn load_predictions(path: &Path) -> Result<Vec<ItemPrediction>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskScore {
    pub task_id: TaskId,
    pub name: String,
    pub items: usize,
    pub correct: usize,
    pub missing: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    /// F1 per answer key present in the ground truth.
    pub per_key_f1: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub predictions: Vec<ItemPrediction>,
    pub tasks: Vec<TaskScore>,
    /// Unweighted mean over tasks.
    pub accuracy: f64,
    pub macro_f1: f64,
    /// Means weighted by item count.
    pub weighted_accuracy: f64,
    pub weighted_macro_f1: f64,
    /// Items without a prediction, scored as wrong.
    pub missing: Vec<String>,
}

fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    if tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    }
}

/// Accuracy and macro-F1 per task plus overall means.
pub fn score_run(items: &[VqaItem], predictions: &[ItemPrediction]) -> Result<RunResult> {
    let by_id: HashMap<&str, &VqaItem> = items.iter().map(|i| (i.id.as_str(), i)).collect();
    let mut pred: HashMap<&str, &str> = HashMap::new();
    for p in predictions {
        if !by_id.contains_key(p.item_id.as_str()) {
            return Err(Error::UnknownItemId(p.item_id.clone()));
        }
        if pred.insert(&p.item_id, &p.key).is_some() {
            return Err(Error::invalid(format!("duplicate prediction for {}", p.item_id)));
        }
    }
    let mut grouped: BTreeMap<TaskId, Vec<&VqaItem>> = BTreeMap::new();
    for it in items {
        grouped.entry(it.task_id).or_default().push(it);
    }
    let mut tasks = Vec::new();
    let mut missing = Vec::new();
    for (task, its) in grouped {
        let mut tp: BTreeMap<&str, usize> = BTreeMap::new();
        let mut fp: BTreeMap<&str, usize> = BTreeMap::new();
        let mut fn_: BTreeMap<&str, usize> = BTreeMap::new();
        let mut correct = 0;
        let mut miss = 0;
        for it in &its {
            let truth = it.answer.as_str();
            match pred.get(it.id.as_str()) {
                Some(&k) if k == truth => {
                    correct += 1;
                    *tp.entry(truth).or_default() += 1;
                }
                Some(&k) => {
                    *fp.entry(k).or_default() += 1;
                    *fn_.entry(truth).or_default() += 1;
                }
                None => {
                    miss += 1;
                    missing.push(it.id.clone());
                    *fn_.entry(truth).or_default() += 1;
                }
            }
        }
        let keys: BTreeSet<&str> = its.iter().map(|i| i.answer.as_str()).collect();
        let per_key_f1: BTreeMap<String, f64> = keys
            .iter()
            .map(|k| {
                let g = |m: &BTreeMap<&str, usize>| m.get(k).copied().unwrap_or(0);
                (k.to_string(), f1(g(&tp), g(&fp), g(&fn_)))
            })
            .collect();
        tasks.push(TaskScore {
            task_id: task,
            name: task.name().to_string(),
            items: its.len(),
            correct,
            missing: miss,
            accuracy: correct as f64 / its.len() as f64,
            macro_f1: per_key_f1.values().sum::<f64>() / per_key_f1.len() as f64,
            per_key_f1,
        });
    }
    let n_tasks = tasks.len().max(1) as f64;
    let n_items = items.len().max(1) as f64;
    Ok(RunResult {
        predictions: predictions.to_vec(),
        accuracy: tasks.iter().map(|t| t.accuracy).sum::<f64>() / n_tasks,
        macro_f1: tasks.iter().map(|t| t.macro_f1).sum::<f64>() / n_tasks,
        weighted_accuracy: tasks.iter().map(|t| t.correct as f64).sum::<f64>() / n_items,
        weighted_macro_f1: tasks.iter().map(|t| t.macro_f1 * t.items as f64).sum::<f64>() / n_items,
        tasks,
        missing,
    })
}

impl RunResult {
    pub fn to_table(&self) -> String {
        let mut s = format!("{:<8} {:<14} {:>6} {:>9} {:>9}\n", "task", "name", "items", "accuracy", "macro-F1");
        for t in &self.tasks {
            s.push_str(&format!(
                "{:<8} {:<14} {:>6} {:>9.4} {:>9.4}\n",
                t.task_id.as_str(),
                t.name,
                t.items,
                t.accuracy,
                t.macro_f1
            ));
        }
        s.push_str(&format!("{:<8} {:<14} {:>6} {:>9.4} {:>9.4}\n", "avg", "task mean", "", self.accuracy, self.macro_f1));
        s.push_str(&format!(
            "{:<8} {:<14} {:>6} {:>9.4} {:>9.4}\n",
            "avg",
            "item weighted",
            self.tasks.iter().map(|t| t.items).sum::<usize>(),
            self.weighted_accuracy,
            self.weighted_macro_f1
        ));
        if !self.missing.is_empty() {
            s.push_str(&format!("missing predictions: {}\n", self.missing.len()));
        }
        s
    }
}

/// Answers every item through the engine. Items whose pipeline run fails
/// get no prediction.
pub fn run_benchmark(
    engine: &Engine,
    items: &[VqaItem],
    image_for: impl Fn(&str) -> Result<ImageRef>,
    ablation: Ablation,
) -> Result<Vec<ItemPrediction>> {
    let mut out = Vec::with_capacity(items.len());
    for it in items {
        let query = it.to_query(image_for(&it.image)?)?;
        if let Ok(o) = engine.answer_vqa_with(&query, ablation) {
            out.push(ItemPrediction {
                item_id: it.id.clone(),
                key: o.decision.key,
            });
        }
    }
    Ok(out)
}
