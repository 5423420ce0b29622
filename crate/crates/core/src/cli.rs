//! Command-line interface.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::bench::{generate_benchmark, generate_vqa_items, load_items, load_predictions, run_benchmark, save_items, score_run, LabelFixture, TaskId, Templates};
use crate::config::{load_frames, load_image, Config};
use crate::error::{Error, Result};
use crate::evidence::BankSnapshot;
use crate::orchestration::split_inline_options;
use crate::synth::{SynthConfig, SynthWorld, VoterScript};
use crate::types::{Attachment, Query, TaskKind};
use crate::workflows::{Ablation, Outcome};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "fetalscope", version, about = "Evidence-driven multi-agent fetal ultrasound analysis")]
pub struct Cli {
    /// Configuration file (default: ./fetalscope.toml when present).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Answer a multiple-choice question about an image.
    Ask(AskArgs),
    /// Caption an image.
    Caption(ImageArgs),
    /// Summarize a directory of video frames.
    SummarizeVideo(VideoArgs),
    /// Generate, run and score the multiple-choice benchmark.
    #[command(subcommand)]
    Bench(BenchCommand),
    /// List or health-check registered tools.
    #[command(subcommand)]
    Tools(ToolsCommand),
    /// Inspect saved evidence banks.
    #[command(subcommand)]
    Bank(BankCommand),
    /// Write a synthetic working directory (tools, images, benchmark, config).
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct AskArgs {
    /// Benchmark item JSON.
    #[arg(long, conflicts_with = "question")]
    pub item: Option<PathBuf>,
    /// Question text; options may be inline as "(A) ... (B) ...".
    #[arg(long, required_unless_present = "item")]
    pub question: Option<String>,
    /// Extra option texts, keyed A, B, C... in order.
    #[arg(long = "option")]
    pub options: Vec<String>,
    /// Query id for inline questions (keys scripted voter replies).
    #[arg(long, default_value = "cli")]
    pub id: String,
    /// Image file (.json, .png, .pgm); defaults to the item's image in images_dir.
    #[arg(long)]
    pub image: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    pub spacing: f64,
    #[arg(long, default_value = "full", value_parser = parse_ablation)]
    pub ablation: Ablation,
    /// Also write the evidence bank snapshot here.
    #[arg(long)]
    pub bank_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ImageArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub spacing: f64,
    #[arg(long)]
    pub bank_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VideoArgs {
    /// Directory of frames, read in name order.
    #[arg(long)]
    pub frames: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub spacing: f64,
    #[arg(long, default_value_t = 25.0)]
    pub fps: f64,
    #[arg(long)]
    pub bank_out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum BenchCommand {
    /// Generate benchmark items from labelled fixtures.
    Generate {
        /// JSON map of task family -> label fixtures.
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        seed: u64,
        /// Output items JSON.
        #[arg(long)]
        out: PathBuf,
        /// Restrict to one task (Task1..Task10).
        #[arg(long, value_parser = parse_task_id)]
        task: Option<TaskId>,
    },
    /// Score predictions against benchmark items.
    Score {
        /// Benchmark items JSON.
        #[arg(long)]
        items: PathBuf,
        /// Predictions JSON: a list of {item_id, key}.
        #[arg(long)]
        preds: PathBuf,
    },
    /// Answer every benchmark item and write predictions.
    Run {
        /// Benchmark items JSON.
        #[arg(long)]
        items: PathBuf,
        /// Output predictions JSON.
        #[arg(long)]
        out: PathBuf,
        /// Pipeline variant to run.
        #[arg(long, default_value = "full", value_parser = parse_ablation)]
        ablation: Ablation,
    },
}

#[derive(Debug, Subcommand)]
pub enum ToolsCommand {
    /// List registered tools.
    List,
    /// Health-check one tool or all tools.
    Probe { id: Option<String> },
}

#[derive(Debug, Subcommand)]
pub enum BankCommand {
    /// Print a saved evidence bank snapshot.
    Dump { path: PathBuf },
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Labelled images per task family.
    #[arg(long, default_value_t = 3)]
    pub per_family: usize,
    /// Make the third tool of every family return wrong outputs.
    #[arg(long)]
    pub corrupt: bool,
    /// Scripted voter behaviour: correct, wrong_on_measurement or split.
    #[arg(long, default_value = "correct", value_parser = parse_voters)]
    pub voters: VoterScript,
}

fn parse_ablation(s: &str) -> std::result::Result<Ablation, String> {
    Ablation::by_name(s).ok_or_else(|| format!("expected one of {}", Ablation::NAMES.join(", ")))
}

fn parse_task_id(s: &str) -> std::result::Result<TaskId, String> {
    TaskId::ALL
        .into_iter()
        .find(|t| t.as_str().eq_ignore_ascii_case(s))
        .ok_or_else(|| "expected Task1..Task10".to_string())
}

fn parse_voters(s: &str) -> std::result::Result<VoterScript, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| "expected correct, wrong_on_measurement or split".to_string())
}

struct Ctx<'a> {
    json: bool,
    config: Option<PathBuf>,
    out: &'a mut dyn Write,
}

impl Ctx<'_> {
    fn config(&self) -> Result<Config> {
        match &self.config {
            Some(p) => Config::load(p),
            None if Path::new("fetalscope.toml").exists() => Config::load(Path::new("fetalscope.toml")),
            None => Err(Error::Config("no configuration: pass --config or create ./fetalscope.toml".into())),
        }
    }

    fn emit<T: Serialize>(&mut self, value: &T, text: impl FnOnce() -> String) -> Result<()> {
        let s = if self.json {
            serde_json::to_string_pretty(value)? + "\n"
        } else {
            text()
        };
        self.out
            .write_all(s.as_bytes())
            .map_err(|e| Error::io("<stdout>", e))
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn save_bank(path: &Option<PathBuf>, bank: &BankSnapshot) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, bank.to_json()?).map_err(|e| Error::io(p, e)),
        None => Ok(()),
    }
}

fn ask(ctx: &mut Ctx, a: &AskArgs) -> Result<()> {
    let cfg = ctx.config()?;
    let engine = cfg.build_engine()?;
    let query = if let Some(p) = &a.item {
        let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        let item: crate::bench::VqaItem = serde_json::from_str(&text)?;
        item.validate()?;
        let path = match &a.image {
            Some(i) => i.clone(),
            None => cfg.find_image(&item.image)?,
        };
        item.to_query(load_image(&path, a.spacing)?)?
    } else {
        let q = a.question.as_deref().unwrap_or_default();
        let (stem, mut options) = split_inline_options(q);
        if !a.options.is_empty() {
            options = crate::types::options_from_texts(&a.options);
        }
        let text = if options.is_empty() { q.to_string() } else { stem };
        let image = a
            .image
            .as_ref()
            .ok_or_else(|| Error::invalid("--image is required with --question"))?;
        Query::new(a.id.clone(), text, options, vec![Attachment::Image(load_image(image, a.spacing)?)])?
    };
    let outcome = if a.ablation == Ablation::FULL {
        engine.handle(&query)?
    } else {
        Outcome::Vqa(engine.answer_vqa_with(&query, a.ablation)?)
    };
    let bank = match &outcome {
        Outcome::Vqa(o) => &o.bank,
        Outcome::Caption(o) | Outcome::VideoSummary(o) => &o.bank,
    };
    save_bank(&a.bank_out, bank)?;
    ctx.emit(&outcome, || match &outcome {
        Outcome::Vqa(o) => {
            let text = query
                .options
                .iter()
                .find(|x| x.key == o.decision.key)
                .map(|x| x.text.as_str())
                .unwrap_or("");
            format!("Answer: ({}) {}\n\n{}", o.decision.key, text, o.report.to_text())
        }
        Outcome::Caption(o) | Outcome::VideoSummary(o) => o.report.to_text(),
    })
}

fn caption(ctx: &mut Ctx, a: &ImageArgs) -> Result<()> {
    let engine = ctx.config()?.build_engine()?;
    let out = engine.caption_image(&load_image(&a.image, a.spacing)?)?;
    save_bank(&a.bank_out, &out.bank)?;
    ctx.emit(&out, || out.report.to_text())
}

fn summarize(ctx: &mut Ctx, a: &VideoArgs) -> Result<()> {
    let engine = ctx.config()?.build_engine()?;
    let out = engine.summarize_video(&load_frames(&a.frames, a.spacing, a.fps)?)?;
    save_bank(&a.bank_out, &out.bank)?;
    ctx.emit(&out, || out.report.to_text())
}

fn bench(ctx: &mut Ctx, cmd: &BenchCommand) -> Result<()> {
    match cmd {
        BenchCommand::Generate { labels, seed, out, task } => {
            let text = std::fs::read_to_string(labels).map_err(|e| Error::io(labels, e))?;
            let families: std::collections::BTreeMap<TaskKind, Vec<LabelFixture>> = serde_json::from_str(&text)?;
            let templates = Templates::default();
            let items = match task {
                Some(t) => {
                    let fx = families
                        .get(&t.kind())
                        .ok_or_else(|| Error::invalid(format!("no labels for {}", t.kind())))?;
                    generate_vqa_items(fx, *t, &templates, *seed)?
                }
                None => generate_benchmark(&families, &templates, *seed)?,
            };
            save_items(out, &items)?;
            let mut counts: std::collections::BTreeMap<TaskId, usize> = Default::default();
            for it in &items {
                *counts.entry(it.task_id).or_default() += 1;
            }
            let summary: Vec<(String, usize)> = counts.iter().map(|(t, n)| (t.to_string(), *n)).collect();
            ctx.emit(&summary, || {
                let mut s: String = counts
                    .iter()
                    .map(|(t, n)| format!("{:<7} {:<13} {n}\n", t.as_str(), t.name()))
                    .collect();
                s.push_str(&format!("total {} items -> {}\n", items.len(), out.display()));
                s
            })
        }
        BenchCommand::Score { items, preds } => {
            let items = load_items(items)?;
            let preds = load_predictions(preds)?;
            let result = score_run(&items, &preds)?;
            ctx.emit(&result, || result.to_table())
        }
        BenchCommand::Run { items, out, ablation } => {
            let cfg = ctx.config()?;
            let engine = cfg.build_engine()?;
            let items = load_items(items)?;
            let preds = run_benchmark(&engine, &items, |id| load_image(&cfg.find_image(id)?, 1.0), *ablation)?;
            write_json(out, &preds)?;
            let n = preds.len();
            ctx.emit(&preds, || format!("{n} of {} items answered -> {}\n", items.len(), out.display()))
        }
    }
}

#[derive(Serialize)]
struct ToolRow {
    id: String,
    task: TaskKind,
    adapter: crate::toolkit::AdapterKind,
    degraded: bool,
}

#[derive(Serialize)]
struct ProbeRow {
    id: String,
    ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

fn tools(ctx: &mut Ctx, cmd: &ToolsCommand) -> Result<()> {
    let reg = ctx.config()?.build_registry()?;
    match cmd {
        ToolsCommand::List => {
            let rows: Vec<ToolRow> = reg
                .iter()
                .map(|t| ToolRow {
                    id: t.id.clone(),
                    task: t.task,
                    adapter: t.adapter_kind(),
                    degraded: t.degraded,
                })
                .collect();
            ctx.emit(&rows, || {
                rows.iter()
                    .map(|r| {
                        let kind = if r.adapter == crate::toolkit::AdapterKind::Remote { "remote" } else { "in_process" };
                        let flag = if r.degraded { " (degraded)" } else { "" };
                        format!("{:<16} {:<16} {kind}{flag}\n", r.id, r.task.as_str())
                    })
                    .collect()
            })
        }
        ToolsCommand::Probe { id } => {
            let ids: Vec<String> = match id {
                Some(i) => vec![i.clone()],
                None => reg.iter().map(|t| t.id.clone()).collect(),
            };
            let rows: Vec<ProbeRow> = ids
                .into_iter()
                .map(|id| {
                    let r = reg.probe(&id);
                    ProbeRow {
                        ok: r.is_ok(),
                        error: r.err().map(|e| e.to_string()),
                        id,
                    }
                })
                .collect();
            let failed = rows.iter().filter(|r| !r.ok).count();
            ctx.emit(&rows, || {
                rows.iter()
                    .map(|r| match &r.error {
                        None => format!("{:<16} ok\n", r.id),
                        Some(e) => format!("{:<16} FAILED {e}\n", r.id),
                    })
                    .collect()
            })?;
            if failed > 0 {
                return Err(Error::ToolUnavailable {
                    tool: format!("{failed} tool(s)"),
                    reason: "health probe failed".into(),
                });
            }
            Ok(())
        }
    }
}

fn bank(ctx: &mut Ctx, cmd: &BankCommand) -> Result<()> {
    let BankCommand::Dump { path } = cmd;
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let snap = BankSnapshot::from_json(&text)?;
    ctx.emit(&snap, || {
        let mut s = format!("run {} ({:?})\n", snap.run_id, snap.mode);
        for e in snap.entries() {
            s.push_str(&format!("{:>4}  {:<8} {}\n", e.id, format!("{:?}", e.item.section()).to_lowercase(), e.item.tag()));
        }
        s
    })
}

fn synth(ctx: &mut Ctx, a: &SynthArgs) -> Result<()> {
    let world = SynthWorld::generate(SynthConfig {
        seed: a.seed,
        per_family: a.per_family,
        corrupt: a.corrupt,
        voters: a.voters,
        ..SynthConfig::default()
    })?;
    world.write_dir(&a.out)?;
    let summary = serde_json::json!({
        "dir": a.out.display().to_string(),
        "images": world.images.len(),
        "items": world.items.len(),
        "video_frames": world.video.frames().len(),
    });
    ctx.emit(&summary, || {
        format!(
            "wrote {} images, {} benchmark items and a {}-frame video to {}\n",
            world.images.len(),
            world.items.len(),
            world.video.frames().len(),
            a.out.display()
        )
    })
}

fn dispatch(ctx: &mut Ctx, cmd: &Command) -> Result<()> {
    match cmd {
        Command::Ask(a) => ask(ctx, a),
        Command::Caption(a) => caption(ctx, a),
        Command::SummarizeVideo(a) => summarize(ctx, a),
        Command::Bench(b) => bench(ctx, b),
        Command::Tools(t) => tools(ctx, t),
        Command::Bank(b) => bank(ctx, b),
        Command::Synth(s) => synth(ctx, s),
    }
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit code: 0 success, 1 runtime error, 2 usage error.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let target: &mut dyn Write = if code == EXIT_OK { out } else { err };
            let _ = write!(target, "{}", e.render());
            return code;
        }
    };
    let json = cli.json;
    let mut ctx = Ctx {
        json,
        config: cli.config.clone(),
        out,
    };
    match dispatch(&mut ctx, &cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            if json {
                let body = serde_json::json!({"error": {"kind": e.kind(), "message": e.to_string()}});
                let _ = writeln!(err, "{body}");
            } else {
                let _ = writeln!(err, "error[{}]: {e}", e.kind());
            }
            EXIT_RUNTIME
        }
    }
}
