//! One pass/fail line per acceptance criterion. Run with `--nocapture` to
//! see the report.

mod common;

use std::time::Instant;

use fetalscope::bench::{run_benchmark, score_run, ItemPrediction, TaskId, VqaItem};
use fetalscope::evidence::{BankMode, Embedder, KnowledgeChunk, VectorIndex};
use fetalscope::fusion::{
    agreement_fusion, consistency_weighted, ellipse_circumference, fit_ellipse, label_majority_vote,
    median_outlier_correct, pixel_majority_vote, ramanujan_perimeter, EllipseParams, LabelVote,
};
use fetalscope::reporting::{invert_growth_curve, percentile_lookup, ungrounded_numerals, ChartMeasure};
use fetalscope::synth::{synthetic_charts, SynthConfig, SynthWorld, VoterScript};
use fetalscope::toolkit::{Adapter, FixtureStore, ToolRegistry};
use fetalscope::types::{ImageRef, Mask, OptionItem, TaskKind, VideoRef};
use fetalscope::workflows::{extract_keyframes, Ablation, CaptionTable, KeyframeConfig, DEFAULT_CAPTIONING};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn ok<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn world(corrupt: bool, voters: VoterScript) -> Result<SynthWorld, String> {
    ok(SynthWorld::generate(SynthConfig { corrupt, voters, ..SynthConfig::default() }))
}

fn fusion_oracles() -> Check {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let classes = ["abdomen", "brain", "femur", "thorax"];
    for i in 0..200 {
        let (w, h, n) = (rng.gen_range(1..16), rng.gen_range(1..16), rng.gen_range(1..7));
        let data: Vec<Vec<bool>> = (0..n).map(|_| (0..w * h).map(|_| rng.gen_bool(0.5)).collect()).collect();
        let masks: Vec<Mask> = ok(data.iter().map(|d| Mask::new(w, h, d.clone(), 1.0)).collect::<Result<_, _>>())?;
        let refs: Vec<&Mask> = masks.iter().collect();
        ensure!(ok(pixel_majority_vote(&refs))?.data() == common::pixel_vote_oracle(&data).as_slice(), "pixel vote instance {i}");

        let k = rng.gen_range(1..8);
        let labels: Vec<&str> = (0..k).map(|_| classes[rng.gen_range(0..4)]).collect();
        ensure!(ok(label_majority_vote(&labels))? == common::label_majority_oracle(&labels), "label vote {labels:?}");

        let tools: Vec<String> = (0..k).map(|j| format!("tool{j}")).collect();
        let mut priority = tools.clone();
        priority.shuffle(&mut rng);
        let votes: Vec<LabelVote> = tools
            .iter()
            .zip(&labels)
            .map(|(t, l)| LabelVote { tool_id: t.clone(), label: l.to_string(), confidence: rng.gen() })
            .collect();
        let pairs: Vec<(&str, &str)> = tools.iter().map(String::as_str).zip(labels.iter().copied()).collect();
        let prio: Vec<&str> = priority.iter().map(String::as_str).collect();
        ensure!(ok(agreement_fusion(&votes, &priority))? == common::agreement_oracle(&pairs, &prio), "agreement {pairs:?}");
    }
    let secs = t0.elapsed().as_secs_f64();
    ensure!(secs < 5.0, "took {secs:.2} s");
    Ok(format!("200 instances per rule in {secs:.2} s"))
}

fn geometry() -> Check {
    let mut worst_circle: f64 = 0.0;
    for r in [1.0, 12.5, 50.0, 100.0, 250.0] {
        let p = ok(EllipseParams::new(0.0, 0.0, r, r, 0.0))?;
        let c = ok(ellipse_circumference(&p, 0.1))?;
        worst_circle = worst_circle.max((c - 2.0 * std::f64::consts::PI * r * 0.1).abs() / c);
    }
    ensure!(worst_circle <= 1e-9, "circle error {worst_circle:e}");
    let mut worst_quad: f64 = 0.0;
    for i in 0..=190 {
        let ratio = 1.0 + i as f64 * 0.1;
        let exact = common::arc_length(ratio, 1.0);
        worst_quad = worst_quad.max((ramanujan_perimeter(ratio, 1.0) - exact).abs() / exact);
    }
    ensure!(worst_quad <= 1e-4, "quadrature error {worst_quad:e}");
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut worst_px, mut worst_deg): (f64, f64) = (0.0, 0.0);
    for i in 0..50 {
        let a = rng.gen_range(20.0..70.0);
        let b = a * rng.gen_range(0.35..0.8);
        let theta = rng.gen_range(0.0..std::f64::consts::PI);
        let (cx, cy) = (rng.gen_range(90.0..110.0), rng.gen_range(90.0..110.0));
        let truth = ok(EllipseParams::new(cx, cy, a, b, theta))?;
        let fit = ok(fit_ellipse(&ok(truth.rasterize(200, 200, 1.0))?)).map_err(|e| format!("draw {i}: {e}"))?;
        let px = [(fit.cx - cx).abs(), (fit.cy - cy).abs(), (fit.a - a).abs(), (fit.b - b).abs()]
            .into_iter()
            .fold(0.0, f64::max);
        let d = (fit.theta - truth.theta).abs();
        let deg = d.min(std::f64::consts::PI - d).to_degrees();
        worst_px = worst_px.max(px);
        worst_deg = worst_deg.max(deg);
    }
    let secs = t0.elapsed().as_secs_f64();
    ensure!(worst_px <= 2.0 && worst_deg <= 3.0, "fit error {worst_px:.3} px / {worst_deg:.3} deg");
    ensure!(secs < 30.0, "fits took {secs:.1} s");
    Ok(format!(
        "circle {worst_circle:.1e}, Ramanujan vs quadrature {worst_quad:.1e}, 50 fits within {worst_px:.2} px / {worst_deg:.2} deg"
    ))
}

fn scalar_fusion() -> Check {
    let (f, flags) = ok(median_outlier_correct(&[120.0, 121.0, 170.0], 15.0))?;
    ensure!((f - (120.0 + 121.0 + 121.0) / 3.0).abs() <= 1e-9 && flags == [false, false, true], "outlier example gave {f}");
    let (f, _) = ok(median_outlier_correct(&[120.0, 121.0, 122.0], 15.0))?;
    ensure!((f - 121.0).abs() <= 1e-9, "in-threshold example gave {f}");
    ensure!(ok(median_outlier_correct(&[95.0], 15.0))?.0 == 95.0, "single value");
    let w = 1.0 / 10.5;
    let expected = (2.0 * 20.0 + 2.0 * 20.0 + w * 30.0) / (2.0 + 2.0 + w);
    let f = ok(consistency_weighted(&[20.0, 20.0, 30.0], 0.5))?;
    ensure!((f - expected).abs() <= 1e-9 && (f - 20.2326).abs() < 1e-4, "weighted example gave {f}");
    ensure!((ok(consistency_weighted(&[20.0, 20.0, 20.0], 0.5))? - 20.0).abs() <= 1e-9, "identity");
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..1000 {
        let n = rng.gen_range(1..10);
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-500.0..500.0)).collect();
        let (lo, hi) = (v.iter().cloned().fold(f64::INFINITY, f64::min), v.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
        let a = ok(median_outlier_correct(&v, rng.gen_range(0.1..100.0)))?.0;
        let b = ok(consistency_weighted(&v, rng.gen_range(0.01..5.0)))?;
        ensure!(a >= lo - 1e-9 && a <= hi + 1e-9 && b >= lo - 1e-9 && b <= hi + 1e-9, "out of range for {v:?}");
    }
    Ok(format!("examples exact, 1000 draws in range (weighted example {f:.4})"))
}

fn chart_math() -> Check {
    let charts = synthetic_charts();
    let mut worst_round: f64 = 0.0;
    let mut worst_p: f64 = 0.0;
    for m in [ChartMeasure::Hc, ChartMeasure::Ac] {
        let chart = charts.get(m).ok_or("missing chart")?;
        let (lo, hi) = chart.domain();
        for i in 0..100 {
            let ga = lo + (hi - lo) * i as f64 / 99.0;
            let (mean, sd) = ok(chart.at(ga))?;
            let p50 = ok(percentile_lookup(chart, ga, mean))?;
            let p84 = ok(percentile_lookup(chart, ga, mean + sd))?;
            worst_p = worst_p.max((p50 - 50.0).abs()).max((p84 - 84.13).abs());
            worst_round = worst_round.max((ok(invert_growth_curve(chart, mean))? - ga).abs());
        }
    }
    ensure!(worst_p <= 0.01, "percentile error {worst_p}");
    ensure!(worst_round <= 0.05, "round trip error {worst_round}");
    Ok(format!("percentile error {worst_p:.4}, round trip error {worst_round:.2e} weeks over 2x100 samples"))
}

fn retrieval() -> Check {
    let words = common::vocab();
    for corpus in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + corpus);
        let chunks: Vec<KnowledgeChunk> = (0..200).map(|i| common::random_chunk(&mut rng, &words, i)).collect();
        let index = ok(VectorIndex::build(Embedder::default(), chunks.clone()))?;
        for _ in 0..10 {
            let q = common::random_chunk(&mut rng, &words, 0).text;
            let got: Vec<usize> = ok(index.retrieve(&q, 5))?.iter().map(|s| s.chunk_id).collect();
            ensure!(got == common::oracle_top_k(&chunks, &q, 5), "corpus {corpus}: {got:?}");
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    let mut hits = 0;
    for _ in 0..20 {
        let query: Vec<&String> = words.choose_multiple(&mut rng, 10).collect();
        let mut planted: Vec<&str> = query[..8].iter().map(|s| s.as_str()).collect();
        planted.extend(words.choose_multiple(&mut rng, 4).map(String::as_str));
        let mut chunks: Vec<KnowledgeChunk> = (0..200).map(|i| common::random_chunk(&mut rng, &words, i)).collect();
        let slot = rng.gen_range(0..200);
        chunks[slot].text = planted.join(" ");
        let index = ok(VectorIndex::build(Embedder::default(), chunks))?;
        let q: Vec<&str> = query.iter().map(|s| s.as_str()).collect();
        if ok(index.retrieve(&q.join(" "), 5))?.iter().any(|s| s.chunk_id == slot) {
            hits += 1;
        }
    }
    ensure!(hits == 20, "recall@5 = {}", hits as f64 / 20.0);
    Ok("top-5 equals oracle on 5 corpora x 10 queries; recall@5 = 1.0 on 20 planted queries".into())
}

fn accuracy(w: &SynthWorld, ablation: Ablation) -> Result<f64, String> {
    let engine = ok(w.engine())?;
    let preds = ok(run_benchmark(&engine, &w.items, |id| w.image(id), ablation))?;
    Ok(ok(score_run(&w.items, &preds))?.weighted_accuracy)
}

fn end_to_end() -> Check {
    let perfect = world(false, VoterScript::Correct)?;
    ensure!(perfect.items.len() == 30, "{} items", perfect.items.len());
    let a = accuracy(&perfect, Ablation::FULL)?;
    ensure!(a == 1.0, "perfect tools accuracy {a}");
    let corrupt = world(true, VoterScript::Correct)?;
    let c = accuracy(&corrupt, Ablation::FULL)?;
    ensure!(c == 1.0, "one corrupted tool per expert: accuracy {c}");
    Ok(format!("30 items: accuracy {a:.1} with perfect tools, {c:.1} with one corrupted tool per expert"))
}

fn dpea_direction() -> Check {
    let w = world(false, VoterScript::WrongOnMeasurement)?;
    let full = accuracy(&w, Ablation::FULL)?;
    let voters = accuracy(&w, Ablation::VOTERS_ONLY)?;
    let no_tools = accuracy(&w, Ablation::TOOLS_DISABLED)?;
    ensure!(full > voters && full > no_tools, "full {full}, voters-only {voters}, tools-disabled {no_tools}");
    Ok(format!("full {full:.3} > voters-only {voters:.3}, tools-disabled {no_tools:.3}"))
}

/// Runs every workflow over the three synthetic worlds and checks each bank.
fn workflow_banks() -> Result<(usize, usize, usize), String> {
    let (mut runs, mut ungrounded, mut general_votes) = (0, 0, 0);
    for (corrupt, voters) in [(false, VoterScript::Correct), (true, VoterScript::Correct), (false, VoterScript::Split)] {
        let w = world(corrupt, voters)?;
        let engine = ok(w.engine())?;
        for it in &w.items {
            let out = ok(engine.answer_vqa(&ok(it.to_query(ok(w.image(&it.image))?))?))?;
            ungrounded += ungrounded_numerals(&out.report, &out.bank).len();
            runs += 1;
        }
        for id in w.images.keys() {
            let out = ok(engine.caption_image(&ok(w.image(id))?))?;
            ensure!(out.bank.mode == BankMode::GeneralTask, "caption bank mode");
            ungrounded += ungrounded_numerals(&out.report, &out.bank).len();
            general_votes += out.bank.votes.len();
            runs += 1;
        }
        let out = ok(engine.summarize_video(&w.video))?;
        ensure!(out.bank.mode == BankMode::GeneralTask, "video bank mode");
        ungrounded += ungrounded_numerals(&out.report, &out.bank).len();
        general_votes += out.bank.votes.len();
        runs += 1;
    }
    Ok((runs, ungrounded, general_votes))
}

fn cached_banks() -> Result<(usize, usize, usize), String> {
    static RUNS: std::sync::OnceLock<Result<(usize, usize, usize), String>> = std::sync::OnceLock::new();
    RUNS.get_or_init(workflow_banks).clone()
}

fn groundedness() -> Check {
    let (runs, bad, _) = cached_banks()?;
    ensure!(bad == 0, "{bad} ungrounded numerals");
    Ok(format!("0 ungrounded numerals across {runs} workflow runs"))
}

fn bank_mode_law() -> Check {
    let (runs, _, votes) = cached_banks()?;
    ensure!(votes == 0, "{votes} vote entries in general-task banks");
    Ok(format!("0 vote entries in general-task banks ({runs} runs)"))
}

fn item(id: &str, task: TaskId, answer: &str) -> VqaItem {
    let options = (0..task.arity()).map(|k| OptionItem::new(((b'A' + k as u8) as char).to_string(), format!("o{k}"))).collect();
    VqaItem { id: id.into(), image: id.into(), task_id: task, question: "q".into(), options, answer: answer.into(), meta: None }
}

fn scorer() -> Check {
    let truth = [("1", "A"), ("2", "A"), ("3", "B"), ("4", "B"), ("5", "C")];
    let guess = [("1", "A"), ("2", "A"), ("3", "B"), ("4", "C"), ("5", "B")];
    let items: Vec<VqaItem> = truth.iter().map(|(i, a)| item(i, TaskId::Task4, a)).collect();
    let preds: Vec<ItemPrediction> = guess.iter().map(|(i, k)| ItemPrediction { item_id: i.to_string(), key: k.to_string() }).collect();
    let r = ok(score_run(&items, &preds))?;
    ensure!((r.accuracy - 0.6).abs() < 1e-12 && (r.macro_f1 - 0.5).abs() < 1e-12, "example gave {} / {}", r.accuracy, r.macro_f1);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for set in 0..100 {
        let mut items = Vec::new();
        for task in TaskId::ALL {
            for i in 0..rng.gen_range(0..12) {
                let key = ((b'A' + rng.gen_range(0..task.arity()) as u8) as char).to_string();
                items.push(item(&format!("{task}-{i}"), task, &key));
            }
        }
        if items.is_empty() {
            continue;
        }
        let mut preds = Vec::new();
        for it in &items {
            if rng.gen_bool(0.92) {
                let key = ((b'A' + rng.gen_range(0..it.task_id.arity()) as u8) as char).to_string();
                preds.push(ItemPrediction { item_id: it.id.clone(), key });
            }
        }
        let got = ok(score_run(&items, &preds))?;
        let oracle = common::confusion_oracle(&items, &preds);
        for t in &got.tasks {
            ensure!((t.accuracy, t.macro_f1) == oracle[&t.task_id], "set {set} {:?}", t.task_id);
        }
    }
    Ok("hand example accuracy 0.6 / macro-F1 0.5; 100 random sets equal the confusion-matrix oracle".into())
}

fn keyframes() -> Check {
    let labels = ["brain", "abdomen", "femur", "other"];
    let captions = ok(CaptionTable::parse(DEFAULT_CAPTIONING))?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for seq in 0..100 {
        let n = rng.gen_range(1..80);
        let frames: Vec<(String, f64)> =
            (0..n).map(|_| (labels[rng.gen_range(0..4)].to_string(), rng.gen_range(0..=32) as f64 / 32.0)).collect();
        let mut store = FixtureStore::new();
        let mut images = Vec::new();
        for (i, (label, score)) in frames.iter().enumerate() {
            let id = format!("f{i}");
            let other = if label == "other" { "brain" } else { "other" };
            store.insert(id.clone(), fetalscope::synth::label_response("s", TaskKind::StandardPlane, label, *score, &[label, other]));
            images.push(ok(ImageRef::blank(id, 2, 2, 1.0))?);
        }
        let mut reg = ToolRegistry::new();
        ok(reg.register("s", TaskKind::StandardPlane, Adapter::InProcess(std::sync::Arc::new(store))))?;
        let cfg = KeyframeConfig {
            threshold: rng.gen_range(0.05..0.95),
            window: rng.gen_range(1..10),
            max_per_plane: rng.gen_range(1..4),
            scorer: None,
        };
        let video = ok(VideoRef::new("v", images, 25.0))?;
        let got: Vec<usize> = ok(extract_keyframes(&reg, &video, "s", &cfg, &captions))?.frames.iter().map(|k| k.frame_index).collect();
        let want = common::keyframe_oracle(&frames, cfg.threshold, cfg.window, cfg.max_per_plane, &["other"]);
        ensure!(got == want, "sequence {seq}: {got:?} vs {want:?}");
    }
    Ok("100 random sequences equal the brute-force scan".into())
}

#[test]
fn acceptance() {
    let checks: [(&str, fn() -> Check); 11] = [
        ("fusion oracles", fusion_oracles),
        ("geometry", geometry),
        ("scalar fusion", scalar_fusion),
        ("chart math", chart_math),
        ("retrieval", retrieval),
        ("end-to-end VQA", end_to_end),
        ("ablation direction", dpea_direction),
        ("groundedness", groundedness),
        ("bank mode law", bank_mode_law),
        ("scorer", scorer),
        ("keyframes", keyframes),
    ];
    let mut failed = Vec::new();
    for (name, check) in checks {
        match check() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                println!("FAIL  {name}: {why}");
                failed.push(name);
            }
        }
    }
    assert!(failed.is_empty(), "failed: {failed:?}");
}
