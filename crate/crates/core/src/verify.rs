//! Finite-difference gradient suite over every tape operation, each loss in
//! isolation, and the full weighted objective through a small dual model.

use rand::Rng;
use serde::Serialize;

use crate::autodiff::{grad_check, GradCheckReport, Tape, Tensor, Var};
use crate::data::{build_subword_vocab_from_words, tokenize, Example, LabelVocab, TokenizedExample};
use crate::error::Result;
use crate::losses::{inter_term_on_tape, intra_on_tape, jsd_on_tape, sequence_jsd_on_tape, total_loss_on_tape, LossWeights};
use crate::model::{DualModel, EncoderConfig};
use crate::seeding::rng_stream;

#[derive(Debug, Clone, Serialize)]
pub struct SuiteOptions {
    pub seeds: Vec<u64>,
    pub h: f64,
    pub tol: f64,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_blocks: usize,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            seeds: (0..5).collect(),
            h: 1e-6,
            tol: 1e-4,
            d_model: 8,
            n_heads: 2,
            n_blocks: 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NamedCheck {
    pub name: String,
    pub seed: u64,
    pub report: GradCheckReport,
}

impl NamedCheck {
    pub fn passed(&self) -> bool {
        self.report.passed
    }
}

fn random(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("shape")
}

/// Values in `[-hi, -lo] ∪ [lo, hi]`: keeps kinks at zero out of reach of
/// the finite-difference stencil.
fn away_from_zero(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let mut t = random(rng, shape, lo, hi);
    for x in t.data_mut() {
        if rng.random::<bool>() {
            *x = -*x;
        }
    }
    t
}

/// `sum(out * w)` with a fixed random `w`, so every output coordinate gets a
/// distinct upstream gradient.
fn project(tape: &mut Tape<'_>, out: Var, w: &Tensor) -> Result<Var> {
    let wv = tape.constant(w.clone());
    let prod = tape.mul(out, wv)?;
    tape.sum_all(prod)
}

type OpFn = Box<dyn Fn(&mut Tape<'_>, &[Var]) -> Result<Var>>;

fn op_cases(seed: u64) -> Vec<(&'static str, OpFn, Vec<Tensor>, Vec<usize>)> {
    let mut r = rng_stream(seed, 0);
    let r = &mut r;
    let mut cases: Vec<(&'static str, OpFn, Vec<Tensor>, Vec<usize>)> = Vec::new();
    macro_rules! case {
        ($name:expr, $inputs:expr, $out_shape:expr, $body:expr) => {
            cases.push(($name, Box::new($body), $inputs, $out_shape.to_vec()))
        };
    }
    case!("matmul", vec![random(r, &[3, 4], -1.0, 1.0), random(r, &[4, 2], -1.0, 1.0)], [3, 2], |t: &mut Tape<'_>, x: &[Var]| t.matmul(x[0], x[1]));
    case!("transpose", vec![random(r, &[3, 4], -1.0, 1.0)], [4, 3], |t: &mut Tape<'_>, x: &[Var]| t.transpose(x[0]));
    case!("reshape", vec![random(r, &[3, 4], -1.0, 1.0)], [2, 6], |t: &mut Tape<'_>, x: &[Var]| t.reshape(x[0], &[2, 6]));
    case!("add_broadcast", vec![random(r, &[3, 4], -1.0, 1.0), random(r, &[4], -1.0, 1.0)], [3, 4], |t: &mut Tape<'_>, x: &[Var]| t.add(x[0], x[1]));
    case!("sub_broadcast", vec![random(r, &[4], -1.0, 1.0), random(r, &[3, 4], -1.0, 1.0)], [3, 4], |t: &mut Tape<'_>, x: &[Var]| t.sub(x[1], x[0]));
    case!("mul", vec![random(r, &[3, 4], -1.0, 1.0), random(r, &[3, 4], -1.0, 1.0)], [3, 4], |t: &mut Tape<'_>, x: &[Var]| t.mul(x[0], x[1]));
    case!("mul_broadcast", vec![random(r, &[2, 3, 4], -1.0, 1.0), random(r, &[3, 4], -1.0, 1.0)], [2, 3, 4], |t: &mut Tape<'_>, x: &[Var]| t.mul(x[0], x[1]));
    case!("mul_fan_out", vec![random(r, &[5], -1.0, 1.0)], [5], |t: &mut Tape<'_>, x: &[Var]| t.mul(x[0], x[0]));
    case!("scale", vec![random(r, &[5], -1.0, 1.0)], [5], |t: &mut Tape<'_>, x: &[Var]| Ok(t.scale(x[0], -2.5)));
    case!("embedding_gather", vec![random(r, &[5, 3], -1.0, 1.0)], [4, 3], |t: &mut Tape<'_>, x: &[Var]| t.embedding_gather(x[0], &[4, 0, 4, 2]));
    case!("softmax", vec![random(r, &[2, 5], -2.0, 2.0)], [2, 5], |t: &mut Tape<'_>, x: &[Var]| t.softmax(x[0]));
    case!("log", vec![random(r, &[6], 0.3, 3.0)], [6], |t: &mut Tape<'_>, x: &[Var]| t.log(x[0]));
    case!("clamp_min", vec![away_from_zero(r, &[6], 0.05, 1.0)], [6], |t: &mut Tape<'_>, x: &[Var]| Ok(t.clamp_min(x[0], 0.0)));
    case!("relu", vec![away_from_zero(r, &[2, 4], 0.05, 1.0)], [2, 4], |t: &mut Tape<'_>, x: &[Var]| Ok(t.relu(x[0])));
    case!("sum_axis0", vec![random(r, &[3, 4], -1.0, 1.0)], [4], |t: &mut Tape<'_>, x: &[Var]| t.sum(x[0], 0));
    case!("mean_axis1", vec![random(r, &[3, 4], -1.0, 1.0)], [3], |t: &mut Tape<'_>, x: &[Var]| t.mean(x[0], 1));
    case!("layer_norm", vec![random(r, &[3, 5], -2.0, 2.0)], [3, 5], |t: &mut Tape<'_>, x: &[Var]| t.layer_norm(x[0]));
    case!("concat_axis0", vec![random(r, &[2, 3], -1.0, 1.0), random(r, &[1, 3], -1.0, 1.0)], [3, 3], |t: &mut Tape<'_>, x: &[Var]| t.concat(&[x[0], x[1]], 0));
    case!("concat_axis1", vec![random(r, &[2, 3], -1.0, 1.0), random(r, &[2, 2], -1.0, 1.0)], [2, 5], |t: &mut Tape<'_>, x: &[Var]| t.concat(&[x[0], x[1]], 1));
    cases
}

/// One check per tape operation.
pub fn op_checks(seed: u64, h: f64, tol: f64) -> Result<Vec<NamedCheck>> {
    let mut wr = rng_stream(seed, 1);
    op_cases(seed)
        .into_iter()
        .map(|(name, f, inputs, out_shape)| {
            let w = random(&mut wr, &out_shape, -1.0, 1.0);
            let report = grad_check(
                |t, x| {
                    let y = f(t, x)?;
                    project(t, y, &w)
                },
                &inputs,
                h,
                tol,
            )?;
            Ok(NamedCheck {
                name: format!("op/{name}"),
                seed,
                report,
            })
        })
        .collect()
}

/// A tiny labelled pair (original, code-switched) and a dual model sized by
/// `opts`.
pub struct ToyPair {
    pub models: DualModel,
    pub labels: LabelVocab,
    pub tok_o: TokenizedExample,
    pub tok_c: TokenizedExample,
    pub gold_intent: usize,
    pub gold_slots: Vec<usize>,
}

pub fn toy_pair(seed: u64, d_model: usize, n_heads: usize, n_blocks: usize) -> Result<ToyPair> {
    let mk = |w: &[&str], t: &[&str], i: &str, l: &str| {
        Example::new(w.iter().map(|s| s.to_string()).collect(), t.iter().map(|s| s.to_string()).collect(), i, l)
    };
    let corpus = [
        mk(&["cheap", "flights", "to", "boston"], &["B-price", "O", "O", "B-city"], "flight", "en")?,
        mk(&["fare", "to", "new", "york"], &["O", "O", "B-city", "I-city"], "airfare", "en")?,
        mk(&["ground", "service"], &["O", "O"], "ground", "en")?,
    ];
    let orig = corpus[0].clone();
    let switched = mk(&["billig", "flights", "nach", "boston"], &["B-price", "O", "O", "B-city"], "flight", "cs")?;
    let labels = LabelVocab::from_examples(&corpus);
    let words = corpus.iter().chain([&switched]).flat_map(|e| e.words.iter().map(String::as_str));
    let sub = build_subword_vocab_from_words(words, 40);
    let cfg = EncoderConfig {
        d_model,
        n_heads,
        n_blocks,
        ffn_dim: 2 * d_model,
        max_seq_len: 16,
        subword_vocab_size: sub.len(),
        dropout: 0.0,
    };
    let models = DualModel::init(&cfg, &labels, seed, false)?;
    let (gold_intent, gold_slots) = labels.encode(&orig)?;
    Ok(ToyPair {
        tok_o: tokenize(&orig, &sub),
        tok_c: tokenize(&switched, &sub),
        models,
        labels,
        gold_intent,
        gold_slots,
    })
}

/// Checks for each loss in isolation and for the full weighted objective.
pub fn loss_checks(seed: u64, opts: &SuiteOptions) -> Result<Vec<NamedCheck>> {
    let (h, tol) = (opts.h, opts.tol);
    let mut r = rng_stream(seed, 2);
    let mut out = Vec::new();
    let mut push = |name: &str, report: GradCheckReport| {
        out.push(NamedCheck {
            name: name.to_string(),
            seed,
            report,
        })
    };

    let logits = vec![random(&mut r, &[6], -2.0, 2.0), random(&mut r, &[6], -2.0, 2.0)];
    push(
        "loss/jsd",
        grad_check(
            |t, x| {
                let p = t.softmax(x[0])?;
                let q = t.softmax(x[1])?;
                jsd_on_tape(t, p, q)
            },
            &logits,
            h,
            tol,
        )?,
    );

    let seq = vec![random(&mut r, &[3, 5], -2.0, 2.0), random(&mut r, &[3, 5], -2.0, 2.0)];
    push(
        "loss/sequence_jsd",
        grad_check(
            |t, x| {
                let p = t.softmax(x[0])?;
                let q = t.softmax(x[1])?;
                sequence_jsd_on_tape(t, p, q)
            },
            &seq,
            h,
            tol,
        )?,
    );

    let intra_inputs = vec![
        random(&mut r, &[4], -2.0, 2.0),
        random(&mut r, &[4], -2.0, 2.0),
        random(&mut r, &[3, 5], -2.0, 2.0),
        random(&mut r, &[3, 5], -2.0, 2.0),
    ];
    push(
        "loss/intra",
        grad_check(
            |t, x| {
                let io = t.softmax(x[0])?;
                let ic = t.softmax(x[1])?;
                let so = t.softmax(x[2])?;
                let sc = t.softmax(x[3])?;
                intra_on_tape(t, io, ic, so, sc)
            },
            &intra_inputs,
            h,
            tol,
        )?,
    );

    // Inter term through a block-free model: gradients reach the projection,
    // both heads and the embeddings.
    let pair = toy_pair(seed, 4, 1, 0)?;
    let m = &pair.models.model_o;
    push(
        "loss/inter",
        grad_check(
            |t, x| {
                let f = m.forward_with(t, x, &pair.tok_o, None)?;
                inter_term_on_tape(t, m, &f)
            },
            m.params(),
            h,
            tol,
        )?,
    );

    let pair = toy_pair(seed, opts.d_model, opts.n_heads, opts.n_blocks)?;
    let (mo, mc) = (&pair.models.model_o, &pair.models.model_c);
    let k = mo.params().len();
    let inputs: Vec<Tensor> = mo.params().iter().chain(mc.params()).cloned().collect();
    let w = LossWeights::default();
    push(
        "loss/total",
        grad_check(
            |t, x| {
                let fo = mo.forward_with(t, &x[..k], &pair.tok_o, None)?;
                let fc = mc.forward_with(t, &x[k..], &pair.tok_c, None)?;
                Ok(total_loss_on_tape(t, mo, &fo, mc, &fc, pair.gold_intent, &pair.gold_slots, &w)?.total)
            },
            &inputs,
            h,
            tol,
        )?,
    );
    Ok(out)
}

/// Every op check and every loss check for each seed in `opts`.
pub fn gradient_suite(opts: &SuiteOptions) -> Result<Vec<NamedCheck>> {
    let mut all = Vec::new();
    for &seed in &opts.seeds {
        all.extend(op_checks(seed, opts.h, opts.tol)?);
        all.extend(loss_checks(seed, opts)?);
    }
    Ok(all)
}
