//! Dual-model training loop with dev-set model selection.

use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::eval::evaluate;
use super::metrics::MetricsReport;
use crate::augment::{code_switch, CodeSwitchPolicy};
use crate::autodiff::{adam_step, AdamState, LrSchedule, Tape};
use crate::data::{build_subword_vocab_from_words, tokenize, BilingualDictionary, Example, LabelVocab, SubwordVocab, TokenizedExample};
use crate::error::{Error, Result};
use crate::exec::{try_map_indexed, Exec};
use crate::losses::{total_loss_on_tape, LossBreakdown, LossWeights};
use crate::model::{Checkpoint, Deploy, DualModel, EncoderConfig};
use crate::seeding::{derive_seed, rng_stream, streams};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const BEST_CHECKPOINT_FILE: &str = "best.ckpt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub weights: LossWeights,
    /// Per-word code-switching probability.
    pub ratio: f64,
    /// Languages to switch into; empty means every dictionary language.
    pub target_languages: Vec<String>,
    /// Encoder geometry. `subword_vocab_size` is replaced by the size of the
    /// vocabulary built at training time.
    pub encoder: EncoderConfig,
    pub max_subword_pieces: usize,
    pub base_lr: f64,
    pub warmup_steps: u64,
    pub batch_size: usize,
    pub max_steps: u64,
    pub eval_every: u64,
    pub seed: u64,
    pub disable_intra: bool,
    pub disable_inter: bool,
    pub deploy: Deploy,
    /// Start both networks from identical parameters.
    pub shared_init: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            ratio: 0.5,
            target_languages: Vec::new(),
            encoder: EncoderConfig::toy(1),
            max_subword_pieces: 1024,
            base_lr: 1e-3,
            warmup_steps: 100,
            batch_size: 8,
            max_steps: 2000,
            eval_every: 100,
            seed: 0,
            disable_intra: false,
            disable_inter: false,
            deploy: Deploy::ModelC,
            shared_init: false,
        }
    }
}

impl TrainConfig {
    /// Every problem at once.
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        if let Err(Error::Config(v)) = self.weights.validate() {
            p.extend(v);
        }
        if !(0.0..=1.0).contains(&self.ratio) {
            p.push(format!("ratio must lie in [0, 1], got {}", self.ratio));
        }
        let enc = EncoderConfig {
            subword_vocab_size: 1,
            ..self.encoder.clone()
        };
        if let Err(Error::Config(v)) = enc.validate() {
            p.extend(v);
        }
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            p.push(format!("base_lr must be > 0, got {}", self.base_lr));
        }
        for (name, v) in [
            ("warmup_steps", self.warmup_steps),
            ("batch_size", self.batch_size as u64),
            ("max_steps", self.max_steps),
            ("eval_every", self.eval_every),
        ] {
            if v == 0 {
                p.push(format!("{name} must be >= 1"));
            }
        }
        if self.max_subword_pieces < 4 {
            p.push("max_subword_pieces must be >= 4".into());
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p))
        }
    }

    /// Loss weights after applying the ablation switches.
    pub fn effective_weights(&self) -> LossWeights {
        self.weights.ablate(self.disable_intra, self.disable_inter)
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: u64,
    pub lr: f64,
    pub l_intent: f64,
    pub l_slot: f64,
    pub l_intra: f64,
    pub l_inter: f64,
    pub total: f64,
    pub dev_intent_acc: f64,
    pub dev_slot_f1: f64,
    pub dev_overall_acc: f64,
}

/// Passed to the per-step observer after the parameter update.
#[derive(Debug)]
pub struct StepInfo<'a> {
    pub step: u64,
    pub lr: f64,
    /// Batch-mean loss components before the update.
    pub loss: LossBreakdown,
    pub models: &'a DualModel,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: Checkpoint,
    pub best_dev: MetricsReport,
    pub log: Vec<LogRecord>,
    /// Parameters after the final step.
    pub last: DualModel,
}

impl TrainOutcome {
    pub fn metrics_jsonl(&self) -> Result<String> {
        let mut s = String::new();
        for r in &self.log {
            s.push_str(&serde_json::to_string(r)?);
            s.push('\n');
        }
        Ok(s)
    }

    /// Writes `metrics.jsonl` and `best.ckpt` into `dir`.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let log_path = dir.join(METRICS_FILE);
        let mut f = std::fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
        f.write_all(self.metrics_jsonl()?.as_bytes()).map_err(|e| Error::io(&log_path, e))?;
        self.best.save(dir.join(BEST_CHECKPOINT_FILE))
    }
}

/// Sub-word vocabulary over the training words plus every dictionary
/// translation, so code-switched and target-language words are covered.
pub fn training_subwords(train: &[Example], dict: &BilingualDictionary, max_pieces: usize) -> SubwordVocab {
    let words = train
        .iter()
        .flat_map(|e| e.words.iter().map(String::as_str))
        .chain(dict.target_words());
    build_subword_vocab_from_words(words, max_pieces)
}

/// Loss and parameter gradients of one (original, code-switched) pair.
#[derive(Debug, Clone)]
pub struct PairGradients {
    pub loss: LossBreakdown,
    pub grads_o: Vec<Vec<f64>>,
    pub grads_c: Vec<Vec<f64>>,
}

pub fn pair_gradients(
    models: &DualModel,
    tok_o: &TokenizedExample,
    tok_c: &TokenizedExample,
    gold_intent: usize,
    gold_slots: &[usize],
    weights: &LossWeights,
    mut dropout: Option<&mut ChaCha8Rng>,
) -> Result<PairGradients> {
    let (mo, mc) = (&models.model_o, &models.model_c);
    let mut tape = Tape::new();
    let po = mo.register(&mut tape, true);
    let pc = mc.register(&mut tape, true);
    let fo = mo.forward_with(&mut tape, &po, tok_o, dropout.as_deref_mut())?;
    let fc = mc.forward_with(&mut tape, &pc, tok_c, dropout)?;
    let vars = total_loss_on_tape(&mut tape, mo, &fo, mc, &fc, gold_intent, gold_slots, weights)?;
    let loss = vars.breakdown(&tape);
    if !loss.is_finite() {
        return Ok(PairGradients {
            loss,
            grads_o: Vec::new(),
            grads_c: Vec::new(),
        });
    }
    tape.backward(vars.total)?;
    let mut collect = |vars: &[crate::autodiff::Var], model: &crate::model::SluModel| -> Vec<Vec<f64>> {
        vars.iter()
            .zip(model.params())
            .map(|(&v, p)| tape.take_grad(v).unwrap_or_else(|| vec![0.0; p.len()]))
            .collect()
    };
    let grads_o = collect(&po, mo);
    let grads_c = collect(&pc, mc);
    Ok(PairGradients { loss, grads_o, grads_c })
}

fn add_into(acc: &mut [Vec<f64>], g: &[Vec<f64>]) {
    for (a, g) in acc.iter_mut().zip(g) {
        a.iter_mut().zip(g).for_each(|(x, y)| *x += y);
    }
}

/// Everything the loop needs that does not change between steps.
pub struct Prepared {
    pub labels: LabelVocab,
    pub subwords: SubwordVocab,
    pub encoder: EncoderConfig,
    pub policy: CodeSwitchPolicy,
    pub tokens: Vec<TokenizedExample>,
    pub gold: Vec<(usize, Vec<usize>)>,
}

pub fn prepare(cfg: &TrainConfig, train: &[Example], dev: &[Example], dict: &BilingualDictionary) -> Result<Prepared> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("training corpus"));
    }
    if dev.is_empty() {
        return Err(Error::Empty("dev corpus"));
    }
    let labels = LabelVocab::from_examples(train);
    for ex in dev {
        labels.encode(ex)?;
    }
    let subwords = training_subwords(train, dict, cfg.max_subword_pieces);
    let encoder = EncoderConfig {
        subword_vocab_size: subwords.len(),
        ..cfg.encoder.clone()
    };
    encoder.validate()?;
    let targets = if cfg.target_languages.is_empty() {
        dict.languages()
    } else {
        cfg.target_languages.clone()
    };
    if targets.is_empty() {
        return Err(Error::Config(vec![
            "no code-switching target languages: the dictionary is empty and target_languages is unset".into(),
        ]));
    }
    let policy = CodeSwitchPolicy::new(cfg.ratio, targets, derive_seed(cfg.seed, streams::CODE_SWITCH))?;
    let tokens: Vec<TokenizedExample> = train.iter().map(|e| tokenize(e, &subwords)).collect();
    for t in tokens.iter().chain(dev.iter().map(|e| tokenize(e, &subwords)).collect::<Vec<_>>().iter()) {
        if t.subtoken_ids.len() > encoder.max_seq_len {
            return Err(Error::SequenceTooLong {
                len: t.subtoken_ids.len(),
                limit: encoder.max_seq_len,
            });
        }
    }
    let gold = train.iter().map(|e| labels.encode(e)).collect::<Result<Vec<_>>>()?;
    Ok(Prepared {
        labels,
        subwords,
        encoder,
        policy,
        tokens,
        gold,
    })
}

pub fn train(cfg: &TrainConfig, train: &[Example], dev: &[Example], dict: &BilingualDictionary, mode: Exec) -> Result<TrainOutcome> {
    train_observed(cfg, train, dev, dict, mode, &mut |_| {})
}

/// [`train`] with a callback after every optimisation step.
pub fn train_observed(
    cfg: &TrainConfig,
    train: &[Example],
    dev: &[Example],
    dict: &BilingualDictionary,
    mode: Exec,
    observer: &mut dyn FnMut(&StepInfo<'_>),
) -> Result<TrainOutcome> {
    let prep = prepare(cfg, train, dev, dict)?;
    let weights = cfg.effective_weights();
    let schedule = LrSchedule::new(cfg.base_lr, cfg.warmup_steps)?;
    let mut models = DualModel::init(&prep.encoder, &prep.labels, cfg.seed, cfg.shared_init)?;
    let mut adam_o = AdamState::new(models.model_o.params());
    let mut adam_c = AdamState::new(models.model_c.params());
    let dropout_seed = derive_seed(cfg.seed, streams::DROPOUT);
    let use_dropout = prep.encoder.dropout > 0.0;

    let n = train.len();
    let mut order_rng = rng_stream(cfg.seed, streams::BATCHES);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut order_rng);
    let mut epoch: u64 = 0;
    let mut cursor = 0;

    let mut log = Vec::new();
    let mut best: Option<(f64, Checkpoint, MetricsReport)> = None;

    for step in 1..=cfg.max_steps {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        while batch.len() < cfg.batch_size {
            if cursor == n {
                epoch += 1;
                cursor = 0;
                order.shuffle(&mut order_rng);
            }
            batch.push((epoch, order[cursor]));
            cursor += 1;
        }

        let results = try_map_indexed(mode, &batch, |j, &(ep, i)| {
            let switched = code_switch(&train[i], dict, &prep.policy, ep * n as u64 + i as u64);
            let tok_c = tokenize(&switched, &prep.subwords);
            let mut rng = use_dropout.then(|| rng_stream(dropout_seed, (step - 1) * cfg.batch_size as u64 + j as u64));
            let (gi, gs) = &prep.gold[i];
            pair_gradients(&models, &prep.tokens[i], &tok_c, *gi, gs, &weights, rng.as_mut())
        })?;

        let inv = 1.0 / cfg.batch_size as f64;
        let mut mean = LossBreakdown::default();
        for r in &results {
            mean.l_intent += r.loss.l_intent;
            mean.l_slot += r.loss.l_slot;
            mean.l_intra += r.loss.l_intra;
            mean.l_inter += r.loss.l_inter;
            mean.total += r.loss.total;
        }
        for x in [&mut mean.l_intent, &mut mean.l_slot, &mut mean.l_intra, &mut mean.l_inter, &mut mean.total] {
            *x *= inv;
        }
        if !mean.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: step as usize,
                detail: format!(
                    "l_intent={} l_slot={} l_intra={} l_inter={} total={}",
                    mean.l_intent, mean.l_slot, mean.l_intra, mean.l_inter, mean.total
                ),
            });
        }

        let mut go: Vec<Vec<f64>> = models.model_o.params().iter().map(|p| vec![0.0; p.len()]).collect();
        let mut gc: Vec<Vec<f64>> = models.model_c.params().iter().map(|p| vec![0.0; p.len()]).collect();
        for r in &results {
            add_into(&mut go, &r.grads_o);
            add_into(&mut gc, &r.grads_c);
        }
        for g in go.iter_mut().chain(gc.iter_mut()) {
            g.iter_mut().for_each(|x| *x /= cfg.batch_size as f64);
        }

        let lr = schedule.lr_at(step)?;
        adam_step(models.model_o.params_mut(), &go, &mut adam_o, lr)?;
        adam_step(models.model_c.params_mut(), &gc, &mut adam_c, lr)?;

        observer(&StepInfo {
            step,
            lr,
            loss: mean,
            models: &models,
        });

        if step % cfg.eval_every == 0 || step == cfg.max_steps {
            let report = evaluate(models.deployed(cfg.deploy), &prep.labels, &prep.subwords, dev, mode)?;
            log.push(LogRecord {
                step,
                lr,
                l_intent: mean.l_intent,
                l_slot: mean.l_slot,
                l_intra: mean.l_intra,
                l_inter: mean.l_inter,
                total: mean.total,
                dev_intent_acc: report.intent_accuracy(),
                dev_slot_f1: report.slot_f1(),
                dev_overall_acc: report.overall_accuracy(),
            });
            let better = best.as_ref().is_none_or(|(b, _, _)| report.overall_accuracy() > *b);
            if better {
                let ck = Checkpoint::new(models.clone(), prep.labels.clone(), prep.subwords.clone(), cfg.deploy, step);
                best = Some((report.overall_accuracy(), ck, report));
            }
        }
    }

    let (_, best, best_dev) = best.expect("max_steps >= 1 guarantees one evaluation");
    Ok(TrainOutcome {
        best,
        best_dev,
        log,
        last: models,
    })
}
