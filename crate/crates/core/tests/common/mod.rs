//! Brute-force reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use std::collections::HashMap;

use fetalscope::bench::{ItemPrediction, TaskId, VqaItem};
use fetalscope::evidence::{hash_bucket, KnowledgeChunk, DEFAULT_HASH_DIM};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Counts votes pixel by pixel.
pub fn pixel_vote_oracle(masks: &[Vec<bool>]) -> Vec<bool> {
    let n = masks[0].len();
    let mut out = vec![false; n];
    for (i, px) in out.iter_mut().enumerate() {
        let mut yes = 0;
        let mut no = 0;
        for m in masks {
            if m[i] {
                yes += 1;
            } else {
                no += 1;
            }
        }
        *px = yes > no;
    }
    out
}

fn counts<'a>(labels: impl Iterator<Item = &'a str>) -> BTreeMap<&'a str, usize> {
    let mut c = BTreeMap::new();
    for l in labels {
        *c.entry(l).or_insert(0) += 1;
    }
    c
}

/// Plurality, ties to the lexicographically smallest label.
pub fn label_majority_oracle(labels: &[&str]) -> String {
    let c = counts(labels.iter().copied());
    let best = *c.values().max().unwrap();
    // BTreeMap iterates in ascending key order
    c.into_iter().find(|(_, n)| *n == best).unwrap().0.to_string()
}

/// Plurality, ties to the label voted by the highest-priority tool.
pub fn agreement_oracle(votes: &[(&str, &str)], priority: &[&str]) -> (String, usize) {
    let c = counts(votes.iter().map(|(_, l)| *l));
    let best = *c.values().max().unwrap();
    let rank = |tool: &str| priority.iter().position(|p| *p == tool).unwrap_or(usize::MAX);
    let mut winner: Option<(&str, usize)> = None;
    for (label, n) in &c {
        if *n != best {
            continue;
        }
        let r = votes.iter().filter(|(_, l)| l == label).map(|(t, _)| rank(t)).min().unwrap();
        if winner.map_or(true, |(_, wr)| r < wr) {
            winner = Some((label, r));
        }
    }
    (winner.unwrap().0.to_string(), best)
}

fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
        return left + right + (left + right - whole) / 15.0;
    }
    simpson(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + simpson(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

/// Ellipse arc length by adaptive Simpson quadrature of the speed integral.
pub fn arc_length(a: f64, b: f64) -> f64 {
    let f = move |t: f64| (a * a * t.sin().powi(2) + b * b * t.cos().powi(2)).sqrt();
    let quarter = std::f64::consts::FRAC_PI_2;
    let (fa, fm, fb) = (f(0.0), f(quarter / 2.0), f(quarter));
    let whole = quarter / 6.0 * (fa + 4.0 * fm + fb);
    4.0 * simpson(&f, 0.0, quarter, fa, fm, fb, whole, 1e-12, 40)
}

/// Standard normal CDF by the Maclaurin series of erf.
pub fn phi_series(z: f64) -> f64 {
    let x = z / std::f64::consts::SQRT_2;
    let mut term = x;
    let mut sum = x;
    for n in 1..200 {
        term *= -x * x / n as f64;
        sum += term / (2 * n + 1) as f64;
    }
    0.5 * (1.0 + 2.0 / std::f64::consts::PI.sqrt() * sum)
}

/// Local-maximum scan: a frame is kept when no frame in its window beats it,
/// earlier equal scores suppress later ones, and at most `cap` frames per
/// label survive (highest score, then earliest).
pub fn keyframe_oracle(frames: &[(String, f64)], threshold: f64, window: usize, cap: usize, ignored: &[&str]) -> Vec<usize> {
    let score = |i: usize| if ignored.contains(&frames[i].0.as_str()) { 0.0 } else { frames[i].1 };
    let mut cands: Vec<usize> = Vec::new();
    for i in 0..frames.len() {
        if ignored.contains(&frames[i].0.as_str()) || score(i) < threshold {
            continue;
        }
        let mut keep = true;
        for j in 0..frames.len() {
            if j == i || (j as i64 - i as i64).unsigned_abs() as usize > window {
                continue;
            }
            if score(j) > score(i) || (j < i && score(j) == score(i)) {
                keep = false;
            }
        }
        if keep {
            cands.push(i);
        }
    }
    let mut kept = Vec::new();
    for &i in &cands {
        let better = cands
            .iter()
            .filter(|&&j| frames[j].0 == frames[i].0)
            .filter(|&&j| score(j) > score(i) || (score(j) == score(i) && j < i))
            .count();
        if better < cap {
            kept.push(i);
        }
    }
    kept
}

/// Per-task (accuracy, macro-F1) from an explicit confusion matrix whose
/// extra column counts unanswered items.
pub fn confusion_oracle(items: &[VqaItem], preds: &[ItemPrediction]) -> BTreeMap<TaskId, (f64, f64)> {
    let mut out = BTreeMap::new();
    let tasks: std::collections::BTreeSet<TaskId> = items.iter().map(|i| i.task_id).collect();
    for task in tasks {
        let its: Vec<&VqaItem> = items.iter().filter(|i| i.task_id == task).collect();
        let mut keys: Vec<String> = its.iter().flat_map(|i| i.options.iter().map(|o| o.key.clone())).collect();
        keys.sort();
        keys.dedup();
        let k = keys.len();
        let idx = |key: &str| keys.iter().position(|x| x == key);
        let mut cm = vec![vec![0usize; k + 1]; k];
        for it in &its {
            let t = idx(&it.answer).unwrap();
            let p = preds.iter().find(|p| p.item_id == it.id).and_then(|p| idx(&p.key)).unwrap_or(k);
            cm[t][p] += 1;
        }
        let correct: usize = (0..k).map(|i| cm[i][i]).sum();
        let mut f1s = Vec::new();
        for c in 0..k {
            let row: usize = cm[c].iter().sum();
            if row == 0 {
                continue;
            }
            let col: usize = (0..k).map(|r| cm[r][c]).sum();
            let tp = cm[c][c];
            f1s.push(if tp == 0 { 0.0 } else { 2.0 * tp as f64 / (row + col) as f64 });
        }
        out.insert(task, (correct as f64 / its.len() as f64, f1s.iter().sum::<f64>() / f1s.len() as f64));
    }
    out
}

pub fn vocab() -> Vec<String> {
    (0..400).map(|i| format!("w{i}")).collect()
}

pub fn bag(text: &str) -> HashMap<usize, i64> {
    let mut m = HashMap::new();
    for t in text.split_whitespace() {
        *m.entry(hash_bucket(t, DEFAULT_HASH_DIM)).or_insert(0) += 1;
    }
    m
}

/// Exhaustive ranking with exact integer arithmetic: compares
/// dot_i^2 / |c_i|^2 by cross-multiplication (the query norm is shared).
pub fn oracle_top_k(chunks: &[KnowledgeChunk], query: &str, k: usize) -> Vec<usize> {
    let q = bag(query);
    let stats: Vec<(usize, i128, i128)> = chunks
        .iter()
        .map(|c| {
            let b = bag(&c.text);
            let dot: i64 = b.iter().map(|(k, v)| v * q.get(k).copied().unwrap_or(0)).sum();
            let norm2: i64 = b.values().map(|v| v * v).sum();
            (c.id, dot as i128, norm2 as i128)
        })
        .collect();
    let mut order: Vec<&(usize, i128, i128)> = stats.iter().collect();
    order.sort_by(|a, b| {
        // cos_a > cos_b  <=>  dot_a^2 * n_b > dot_b^2 * n_a  (dots are non-negative)
        (b.1 * b.1 * a.2).cmp(&(a.1 * a.1 * b.2)).then(a.0.cmp(&b.0))
    });
    order.into_iter().take(k).map(|s| s.0).collect()
}

pub fn random_chunk(rng: &mut ChaCha8Rng, words: &[String], id: usize) -> KnowledgeChunk {
    let n = rng.gen_range(8..20);
    let text: Vec<&str> = (0..n).map(|_| words[rng.gen_range(0..words.len())].as_str()).collect();
    let text = text.join(" ");
    KnowledgeChunk { id, doc_id: format!("doc{}", id / 20), start: 0, end: text.len(), text, embedding: Vec::new() }
}
