//! Joint intent/slot network.
//!
//! A post-norm transformer encoder over sub-tokens, an intent head on the
//! `[CLS]` state, a slot head on each word's first sub-token, and a learned
//! map from the averaged slot distribution into intent space.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::config::EncoderConfig;
use crate::autodiff::{Tape, Tensor, Var};
use crate::data::{LabelVocab, TokenizedExample};
use crate::error::{Error, Result};
use crate::seeding::rng_stream;

struct BlockLayout {
    q: Vec<(usize, usize)>,
    /// Key projections carry no bias: it would shift every score in a row
    /// equally, which the softmax ignores, so it could never be trained.
    k: Vec<usize>,
    v: Vec<(usize, usize)>,
    out: (usize, usize),
    ln1: (usize, usize),
    ffn_in: (usize, usize),
    ffn_out: (usize, usize),
    ln2: (usize, usize),
}

/// Parameter positions inside [`SluModel::params`].
struct Layout {
    tok_emb: usize,
    pos_emb: usize,
    emb_ln: (usize, usize),
    blocks: Vec<BlockLayout>,
    intent: (usize, usize),
    slot: (usize, usize),
    proj: (usize, usize),
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Kind {
    Weight,
    Bias,
    Gain,
}

struct Spec {
    name: String,
    shape: Vec<usize>,
    kind: Kind,
}

fn layout(cfg: &EncoderConfig, n_intents: usize, n_slots: usize) -> (Layout, Vec<Spec>) {
    let mut specs = Vec::new();
    let mut add = |name: String, shape: Vec<usize>, kind: Kind| {
        specs.push(Spec { name, shape, kind });
        specs.len() - 1
    };
    let d = cfg.d_model;
    let dh = cfg.head_dim();
    let linear = |add: &mut dyn FnMut(String, Vec<usize>, Kind) -> usize, name: &str, out: usize, inp: usize| {
        (
            add(format!("{name}.weight"), vec![out, inp], Kind::Weight),
            add(format!("{name}.bias"), vec![out], Kind::Bias),
        )
    };
    let norm = |add: &mut dyn FnMut(String, Vec<usize>, Kind) -> usize, name: &str| {
        (
            add(format!("{name}.gain"), vec![d], Kind::Gain),
            add(format!("{name}.bias"), vec![d], Kind::Bias),
        )
    };

    let tok_emb = add("embed.tokens".into(), vec![cfg.subword_vocab_size, d], Kind::Weight);
    let pos_emb = add("embed.positions".into(), vec![cfg.max_seq_len, d], Kind::Weight);
    let emb_ln = norm(&mut add, "embed.norm");
    let mut blocks = Vec::with_capacity(cfg.n_blocks);
    for b in 0..cfg.n_blocks {
        let p = format!("blocks.{b}");
        let heads = |which: &str, add: &mut dyn FnMut(String, Vec<usize>, Kind) -> usize| {
            (0..cfg.n_heads)
                .map(|h| linear(add, &format!("{p}.attn.{which}{h}"), dh, d))
                .collect::<Vec<_>>()
        };
        let q = heads("q", &mut add);
        let k = (0..cfg.n_heads)
            .map(|h| add(format!("{p}.attn.k{h}.weight"), vec![dh, d], Kind::Weight))
            .collect();
        let v = heads("v", &mut add);
        let out = linear(&mut add, &format!("{p}.attn.out"), d, d);
        let ln1 = norm(&mut add, &format!("{p}.norm1"));
        let ffn_in = linear(&mut add, &format!("{p}.ffn.in"), cfg.ffn_dim, d);
        let ffn_out = linear(&mut add, &format!("{p}.ffn.out"), d, cfg.ffn_dim);
        let ln2 = norm(&mut add, &format!("{p}.norm2"));
        blocks.push(BlockLayout {
            q,
            k,
            v,
            out,
            ln1,
            ffn_in,
            ffn_out,
            ln2,
        });
    }
    let intent = linear(&mut add, "intent_head", n_intents, d);
    let slot = linear(&mut add, "slot_head", n_slots, d);
    let proj = linear(&mut add, "slot_to_intent", n_intents, n_slots);
    (
        Layout {
            tok_emb,
            pos_emb,
            emb_ln,
            blocks,
            intent,
            slot,
            proj,
        },
        specs,
    )
}

/// Half-width of the uniform initialisation range for a `[rows, cols]`
/// matrix: `sqrt(6 / (fan_in + fan_out))`.
pub fn init_bound(shape: &[usize]) -> f64 {
    (6.0 / (shape[0] + shape[1]) as f64).sqrt()
}

pub struct SluModel {
    config: EncoderConfig,
    n_intents: usize,
    n_slots: usize,
    layout: Layout,
    names: Vec<String>,
    params: Vec<Tensor>,
}

impl Clone for SluModel {
    fn clone(&self) -> Self {
        let mut m = SluModel::zeros(self.config.clone(), self.n_intents, self.n_slots);
        m.params = self.params.clone();
        m
    }
}

impl std::fmt::Debug for SluModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SluModel")
            .field("config", &self.config)
            .field("n_intents", &self.n_intents)
            .field("n_slots", &self.n_slots)
            .field("n_params", &self.num_parameters())
            .finish()
    }
}

impl PartialEq for SluModel {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.n_intents == other.n_intents
            && self.n_slots == other.n_slots
            && self.params == other.params
    }
}

/// Forward-pass handles on a tape.
#[derive(Debug, Clone)]
pub struct Forward {
    pub params: Vec<Var>,
    /// `[subtokens, d_model]`.
    pub hidden: Var,
    /// `[n_intents]`.
    pub intent_logits: Var,
    pub intent_probs: Var,
    /// `[words, n_slots]`.
    pub slot_logits: Var,
    pub slot_probs: Var,
}

/// Predicted distributions for one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionBundle {
    pub intent_dist: Vec<f64>,
    pub slot_dists: Vec<Vec<f64>>,
    pub intent_logits: Vec<f64>,
    pub slot_logits: Vec<Vec<f64>>,
}

impl PredictionBundle {
    pub fn intent(&self) -> usize {
        argmax(&self.intent_dist)
    }

    pub fn slots(&self) -> Vec<usize> {
        self.slot_dists.iter().map(|d| argmax(d)).collect()
    }
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    // First maximum wins on ties.
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn affine_norm(tape: &mut Tape<'_>, x: Var, gain: Var, bias: Var) -> Result<Var> {
    let y = tape.layer_norm(x)?;
    let y = tape.mul(y, gain)?;
    tape.add(y, bias)
}

/// `x W^T + b` for `W: [out, in]`.
fn linear(tape: &mut Tape<'_>, x: Var, w: Var, b: Var) -> Result<Var> {
    let wt = tape.transpose(w)?;
    let y = tape.matmul(x, wt)?;
    tape.add(y, b)
}

fn dropout(tape: &mut Tape<'_>, x: Var, p: f64, rng: Option<&mut ChaCha8Rng>) -> Result<Var> {
    let Some(rng) = rng else { return Ok(x) };
    if p == 0.0 {
        return Ok(x);
    }
    let keep = 1.0 / (1.0 - p);
    let shape = tape.shape(x).to_vec();
    let mask: Vec<f64> = (0..tape.value(x).len())
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect();
    let m = tape.constant(Tensor::new(shape, mask)?);
    tape.mul(x, m)
}

impl SluModel {
    fn zeros(config: EncoderConfig, n_intents: usize, n_slots: usize) -> Self {
        let (layout, specs) = layout(&config, n_intents, n_slots);
        let names = specs.iter().map(|s| s.name.clone()).collect();
        let params = specs.iter().map(|s| Tensor::zeros(s.shape.clone())).collect();
        Self {
            config,
            n_intents,
            n_slots,
            layout,
            names,
            params,
        }
    }

    /// Glorot-uniform weights, zero biases, unit norm gains; deterministic in
    /// `seed`.
    pub fn init(config: EncoderConfig, labels: &LabelVocab, seed: u64) -> Result<Self> {
        Self::init_with_sizes(config, labels.n_intents(), labels.n_slot_tags(), seed)
    }

    pub fn init_with_sizes(config: EncoderConfig, n_intents: usize, n_slots: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if n_intents == 0 || n_slots == 0 {
            return Err(Error::Config(vec![format!(
                "label inventories must be non-empty (intents {n_intents}, slots {n_slots})"
            )]));
        }
        let (layout, specs) = layout(&config, n_intents, n_slots);
        let mut rng = rng_stream(seed, 0);
        let params = specs
            .iter()
            .map(|s| match s.kind {
                Kind::Weight => {
                    let b = init_bound(&s.shape);
                    let n = s.shape.iter().product();
                    let data = (0..n).map(|_| rng.random_range(-b..b)).collect();
                    Tensor::new(s.shape.clone(), data).expect("spec shape")
                }
                Kind::Bias => Tensor::zeros(s.shape.clone()),
                Kind::Gain => Tensor::filled(s.shape.clone(), 1.0),
            })
            .collect();
        Ok(Self {
            config,
            n_intents,
            n_slots,
            layout,
            names: specs.into_iter().map(|s| s.name).collect(),
            params,
        })
    }

    /// Builds a model from named tensors (checkpoint loading).
    pub fn from_named(config: EncoderConfig, n_intents: usize, n_slots: usize, named: Vec<(String, Tensor)>) -> Result<Self> {
        config.validate()?;
        let mut m = Self::zeros(config, n_intents, n_slots);
        if named.len() != m.names.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter blocks, found {}",
                m.names.len(),
                named.len()
            )));
        }
        for ((name, t), (expect, slot)) in named.into_iter().zip(m.names.iter().zip(m.params.iter_mut())) {
            if &name != expect || t.shape() != slot.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name} {:?} does not match expected {expect} {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            if !t.is_finite() {
                return Err(Error::Checkpoint(format!("parameter {name} has non-finite values")));
            }
            *slot = t;
        }
        Ok(m)
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn n_intents(&self) -> usize {
        self.n_intents
    }

    pub fn n_slots(&self) -> usize {
        self.n_slots
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.params[i])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.names.iter().position(|n| n == name).map(move |i| &mut self.params[i])
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(Tensor::is_finite)
    }

    /// Records every parameter as a leaf on `tape`.
    pub fn register<'a>(&'a self, tape: &mut Tape<'a>, trainable: bool) -> Vec<Var> {
        self.params.iter().map(|p| tape.param(p, trainable)).collect()
    }

    fn check_len(&self, tokens: &TokenizedExample) -> Result<()> {
        let len = tokens.subtoken_ids.len();
        if len > self.config.max_seq_len {
            return Err(Error::SequenceTooLong {
                len,
                limit: self.config.max_seq_len,
            });
        }
        if tokens.first_subtoken_index.is_empty() {
            return Err(Error::Empty("utterance words"));
        }
        Ok(())
    }

    /// Hidden states `[subtokens, d_model]`, `[CLS]` first.
    pub fn encode(&self, tape: &mut Tape<'_>, p: &[Var], tokens: &TokenizedExample, mut rng: Option<&mut ChaCha8Rng>) -> Result<Var> {
        self.check_len(tokens)?;
        let l = &self.layout;
        let positions: Vec<usize> = (0..tokens.subtoken_ids.len()).collect();
        let tok = tape.embedding_gather(p[l.tok_emb], &tokens.subtoken_ids)?;
        let pos = tape.embedding_gather(p[l.pos_emb], &positions)?;
        let x = tape.add(tok, pos)?;
        let mut x = affine_norm(tape, x, p[l.emb_ln.0], p[l.emb_ln.1])?;

        let scale = 1.0 / (self.config.head_dim() as f64).sqrt();
        for b in &l.blocks {
            let mut heads = Vec::with_capacity(b.q.len());
            for h in 0..b.q.len() {
                let q = linear(tape, x, p[b.q[h].0], p[b.q[h].1])?;
                let kw = tape.transpose(p[b.k[h]])?;
                let k = tape.matmul(x, kw)?;
                let v = linear(tape, x, p[b.v[h].0], p[b.v[h].1])?;
                let kt = tape.transpose(k)?;
                let scores = tape.matmul(q, kt)?;
                let scores = tape.scale(scores, scale);
                let attn = tape.softmax(scores)?;
                heads.push(tape.matmul(attn, v)?);
            }
            let ctx = tape.concat(&heads, 1)?;
            let attn_out = linear(tape, ctx, p[b.out.0], p[b.out.1])?;
            let attn_out = dropout(tape, attn_out, self.config.dropout, rng.as_deref_mut())?;
            let r = tape.add(x, attn_out)?;
            let x1 = affine_norm(tape, r, p[b.ln1.0], p[b.ln1.1])?;

            let f = linear(tape, x1, p[b.ffn_in.0], p[b.ffn_in.1])?;
            let f = tape.relu(f);
            let f = linear(tape, f, p[b.ffn_out.0], p[b.ffn_out.1])?;
            let f = dropout(tape, f, self.config.dropout, rng.as_deref_mut())?;
            let r = tape.add(x1, f)?;
            x = affine_norm(tape, r, p[b.ln2.0], p[b.ln2.1])?;
        }
        Ok(x)
    }

    /// Full forward pass on `tape`. `rng` enables dropout.
    pub fn forward<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        tokens: &TokenizedExample,
        trainable: bool,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Forward> {
        let p = self.register(tape, trainable);
        self.forward_with(tape, &p, tokens, rng)
    }

    /// Forward pass using already registered parameter handles.
    pub fn forward_with(&self, tape: &mut Tape<'_>, p: &[Var], tokens: &TokenizedExample, rng: Option<&mut ChaCha8Rng>) -> Result<Forward> {
        let l = &self.layout;
        let hidden = self.encode(tape, p, tokens, rng)?;

        let cls = tape.embedding_gather(hidden, &[0])?;
        let il = linear(tape, cls, p[l.intent.0], p[l.intent.1])?;
        let intent_logits = tape.reshape(il, &[self.n_intents])?;
        let intent_probs = tape.softmax(intent_logits)?;

        let words = tape.embedding_gather(hidden, &tokens.first_subtoken_index)?;
        let slot_logits = linear(tape, words, p[l.slot.0], p[l.slot.1])?;
        let slot_probs = tape.softmax(slot_logits)?;

        Ok(Forward {
            params: p.to_vec(),
            hidden,
            intent_logits,
            intent_probs,
            slot_logits,
            slot_probs,
        })
    }

    /// `softmax(W_p avg + b_p)` on the tape; `avg` has shape `[n_slots]`.
    pub fn project_on_tape(&self, tape: &mut Tape<'_>, p: &[Var], avg: Var) -> Result<Var> {
        let row = tape.reshape(avg, &[1, self.n_slots])?;
        let logits = linear(tape, row, p[self.layout.proj.0], p[self.layout.proj.1])?;
        let logits = tape.reshape(logits, &[self.n_intents])?;
        tape.softmax(logits)
    }

    /// Maps an averaged slot distribution into intent space.
    pub fn project_slots_to_intent(&self, avg_slot_dist: &[f64]) -> Result<Vec<f64>> {
        crate::losses::check_distribution(avg_slot_dist)?;
        if avg_slot_dist.len() != self.n_slots {
            return Err(Error::shape("project_slots_to_intent", &[avg_slot_dist.len()], &[self.n_slots]));
        }
        let mut tape = Tape::new();
        let p = self.register(&mut tape, false);
        let avg = tape.constant(Tensor::vector(avg_slot_dist.to_vec()));
        let out = self.project_on_tape(&mut tape, &p, avg)?;
        Ok(tape.value(out).to_vec())
    }

    pub fn predict(&self, tokens: &TokenizedExample) -> Result<PredictionBundle> {
        let mut tape = Tape::new();
        let f = self.forward(&mut tape, tokens, false, None)?;
        let rows = |v: Var, tape: &Tape<'_>| -> Vec<Vec<f64>> { tape.value(v).chunks(self.n_slots).map(<[f64]>::to_vec).collect() };
        Ok(PredictionBundle {
            intent_dist: tape.value(f.intent_probs).to_vec(),
            intent_logits: tape.value(f.intent_logits).to_vec(),
            slot_dists: rows(f.slot_probs, &tape),
            slot_logits: rows(f.slot_logits, &tape),
        })
    }

    /// Sets every parameter in a transformer block to zero except the norm
    /// gains. Test helper for tracing the residual path.
    pub fn zero_blocks(&mut self) {
        for (name, p) in self.names.iter().zip(self.params.iter_mut()) {
            if name.starts_with("blocks.") && !name.ends_with(".gain") {
                p.data_mut().iter_mut().for_each(|x| *x = 0.0);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{tokenize, Example, SubwordVocab};

    fn vocab() -> SubwordVocab {
        crate::data::build_subword_vocab_from_words(["show", "flights", "to", "boston", "monday"], 40)
    }

    fn tokens(words: &[&str], v: &SubwordVocab) -> TokenizedExample {
        let ex = Example::new(
            words.iter().map(|s| s.to_string()).collect(),
            words.iter().map(|_| "O".to_string()).collect(),
            "i",
            "en",
        )
        .unwrap();
        tokenize(&ex, v)
    }

    fn cfg(v: &SubwordVocab) -> EncoderConfig {
        EncoderConfig {
            d_model: 8,
            n_heads: 2,
            n_blocks: 2,
            ffn_dim: 16,
            max_seq_len: 32,
            subword_vocab_size: v.len(),
            dropout: 0.0,
        }
    }

    #[test]
    fn shapes_and_normalisation() {
        let v = vocab();
        let m = SluModel::init_with_sizes(cfg(&v), 4, 5, 1).unwrap();
        let t = tokens(&["show", "flights", "boston"], &v);
        let mut tape = Tape::new();
        let f = m.forward(&mut tape, &t, false, None).unwrap();
        assert_eq!(tape.shape(f.hidden), &[t.subtoken_ids.len(), 8]);
        let b = m.predict(&t).unwrap();
        assert_eq!(b.intent_dist.len(), 4);
        assert_eq!(b.slot_dists.len(), 3);
        assert!((b.intent_dist.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for d in &b.slot_dists {
            assert_eq!(d.len(), 5);
            assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn positions_matter() {
        let v = vocab();
        let m = SluModel::init_with_sizes(cfg(&v), 3, 3, 2).unwrap();
        let a = tokens(&["show", "boston"], &v);
        let mut b = a.clone();
        let (x, y) = (b.subtoken_ids[1], b.subtoken_ids[2]);
        assert_ne!(x, y);
        b.subtoken_ids.swap(1, 2);
        let ha = {
            let mut t = Tape::new();
            let f = m.forward(&mut t, &a, false, None).unwrap();
            t.value(f.hidden).to_vec()
        };
        let hb = {
            let mut t = Tape::new();
            let f = m.forward(&mut t, &b, false, None).unwrap();
            t.value(f.hidden).to_vec()
        };
        assert_ne!(ha, hb);
    }

    #[test]
    fn zero_intent_head_is_uniform() {
        let v = vocab();
        let mut m = SluModel::init_with_sizes(cfg(&v), 4, 3, 3).unwrap();
        m.param_mut("intent_head.weight").unwrap().data_mut().fill(0.0);
        let b = m.predict(&tokens(&["monday"], &v)).unwrap();
        assert!(b.intent_dist.iter().all(|&p| (p - 0.25).abs() < 1e-15));
    }

    #[test]
    fn zero_projection_is_uniform() {
        let v = vocab();
        let mut m = SluModel::init_with_sizes(cfg(&v), 4, 3, 3).unwrap();
        m.param_mut("slot_to_intent.weight").unwrap().data_mut().fill(0.0);
        let out = m.project_slots_to_intent(&[0.2, 0.3, 0.5]).unwrap();
        assert_eq!(out, vec![0.25; 4]);
        let m2 = SluModel::init_with_sizes(cfg(&v), 4, 3, 4).unwrap();
        let out = m2.project_slots_to_intent(&[0.2, 0.3, 0.5]).unwrap();
        assert_eq!(out.len(), 4);
        assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(m2.project_slots_to_intent(&[0.5, 0.6, 0.0]).is_err());
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let v = vocab();
        let a = SluModel::init_with_sizes(cfg(&v), 3, 5, 9).unwrap();
        let b = SluModel::init_with_sizes(cfg(&v), 3, 5, 9).unwrap();
        let c = SluModel::init_with_sizes(cfg(&v), 3, 5, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        for (name, p) in a.names().iter().zip(a.params()) {
            if name.ends_with(".weight") || name.starts_with("embed.tokens") || name.starts_with("embed.positions") {
                let bound = init_bound(p.shape());
                assert!(p.data().iter().all(|x| x.abs() <= bound), "{name}");
            } else if name.ends_with(".bias") {
                assert!(p.data().iter().all(|&x| x == 0.0), "{name}");
            } else {
                assert!(p.data().iter().all(|&x| x == 1.0), "{name}");
            }
        }
    }

    #[test]
    fn over_length_input() {
        let v = vocab();
        let c = EncoderConfig {
            max_seq_len: 3,
            ..cfg(&v)
        };
        let m = SluModel::init_with_sizes(c, 2, 2, 0).unwrap();
        match m.predict(&tokens(&["show", "flights"], &v)) {
            Err(Error::SequenceTooLong { limit: 3, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn zero_blocks_leave_normalised_embeddings() {
        // With every block weight and bias at zero, attention and the
        // feed-forward both output zero, so each block reduces to
        // layer_norm(x) with unit gain. H = LN(LN(LN(tok + pos))).
        let v = vocab();
        let mut m = SluModel::init_with_sizes(cfg(&v), 2, 2, 5).unwrap();
        m.zero_blocks();
        let t = tokens(&["flights", "to", "boston"], &v);
        let mut tape = Tape::new();
        let f = m.forward(&mut tape, &t, false, None).unwrap();

        let d = 8;
        let tok = m.param("embed.tokens").unwrap().data();
        let pos = m.param("embed.positions").unwrap().data();
        let ln = |row: &[f64]| -> Vec<f64> {
            let mu = row.iter().sum::<f64>() / row.len() as f64;
            let var = row.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / row.len() as f64;
            row.iter().map(|x| (x - mu) / (var + 1e-5).sqrt()).collect()
        };
        for (s, &id) in t.subtoken_ids.iter().enumerate() {
            let e: Vec<f64> = (0..d).map(|j| tok[id * d + j] + pos[s * d + j]).collect();
            let mut h = ln(&e);
            for _ in 0..4 {
                h = ln(&h);
            }
            let got = &tape.value(f.hidden)[s * d..(s + 1) * d];
            for (a, b) in got.iter().zip(&h) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn slots_read_only_first_subtokens() {
        // Without blocks there is no mixing across positions, so changing a
        // continuation sub-token cannot change any slot logit.
        let v = crate::data::build_subword_vocab_from_words(["ab", "cd"], 4 + 4);
        let c = EncoderConfig {
            n_blocks: 0,
            ..cfg(&v)
        };
        let m = SluModel::init_with_sizes(c, 2, 3, 6).unwrap();
        let t = tokens(&["ab", "cd"], &v);
        assert_eq!(t.subtoken_ids.len(), 6, "expects single-char pieces");
        let mut t2 = t.clone();
        t2.subtoken_ids[2] = v.id("d").unwrap();
        let a = m.predict(&t).unwrap();
        let b = m.predict(&t2).unwrap();
        assert_eq!(a.slot_logits, b.slot_logits);
    }
}
