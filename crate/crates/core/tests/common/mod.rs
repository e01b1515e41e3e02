//! Helpers shared by integration tests: an independent span oracle and
//! random BIO sequence generation.
#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::Rng;

pub const LABELS: &[&str] = &["city", "day", "price"];

/// Brute force: enumerate every `(start, end, label)` interval and keep the
/// ones that form a maximal chunk under the conlleval reading of BIO
/// (a stray `I-X` opens a chunk of type X).
pub fn oracle_spans(tags: &[String]) -> BTreeSet<(usize, usize, String)> {
    let is = |i: usize, prefix: &str, l: &str| tags[i] == format!("{prefix}-{l}");
    let continues = |i: usize, l: &str| is(i, "I", l);
    let mut out = BTreeSet::new();
    for l in LABELS {
        for start in 0..tags.len() {
            let opens = is(start, "B", l) || (is(start, "I", l) && (start == 0 || !(is(start - 1, "B", l) || is(start - 1, "I", l))));
            if !opens {
                continue;
            }
            for end in start..tags.len() {
                if end > start && !continues(end, l) {
                    break;
                }
                if end + 1 == tags.len() || !continues(end + 1, l) {
                    out.insert((start, end, l.to_string()));
                }
            }
        }
    }
    out
}

pub fn oracle_f1(pred: &[Vec<String>], gold: &[Vec<String>]) -> f64 {
    let (mut c, mut np, mut ng) = (0usize, 0usize, 0usize);
    for (p, g) in pred.iter().zip(gold) {
        let (ps, gs) = (oracle_spans(p), oracle_spans(g));
        c += ps.intersection(&gs).count();
        np += ps.len();
        ng += gs.len();
    }
    let prec = if np == 0 { 0.0 } else { c as f64 / np as f64 };
    let rec = if ng == 0 { 0.0 } else { c as f64 / ng as f64 };
    if prec + rec == 0.0 {
        0.0
    } else {
        2.0 * prec * rec / (prec + rec)
    }
}

/// Unconstrained BIO tags, including ill-formed `I-` continuations.
pub fn random_tags(rng: &mut impl Rng, n: usize) -> Vec<String> {
    (0..n)
        .map(|_| match rng.random_range(0..3) {
            0 => "O".to_string(),
            1 => format!("B-{}", LABELS[rng.random_range(0..LABELS.len())]),
            _ => format!("I-{}", LABELS[rng.random_range(0..LABELS.len())]),
        })
        .collect()
}

/// A copy of `tags` with roughly `rate` of positions resampled.
pub fn perturb(rng: &mut impl Rng, tags: &[String], rate: f64) -> Vec<String> {
    let fresh = random_tags(rng, tags.len());
    tags.iter()
        .zip(fresh)
        .map(|(t, f)| if rng.random::<f64>() < rate { f } else { t.clone() })
        .collect()
}

pub fn random_distribution(rng: &mut impl Rng, k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 1e-3).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / s).collect()
}
