//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::augment::{augment_corpus_counted, CodeSwitchPolicy};
use crate::data::{load_dictionary, read_examples, synth_corpus, write_corpus, SynthSpec};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::{Checkpoint, Deploy};
use crate::pipeline::{evaluate, train, zero_shot_eval, TrainConfig};
use crate::verify::{gradient_suite, SuiteOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "kdslu", version, about = "Dual-model knowledge-distillation trainer for cross-lingual SLU")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic parallel multilingual corpus and its dictionary.
    Synth(SynthArgs),
    /// Write a code-switched copy of a corpus.
    Augment(AugmentArgs),
    /// Train a dual model from a run configuration file.
    Train(TrainArgs),
    /// Score a checkpoint on a corpus.
    Eval(EvalArgs),
    /// Finite-difference checks of every operation and loss.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated language codes; the first is the source language.
    #[arg(long, default_value = "en,de,es")]
    languages: String,
    #[arg(long, default_value_t = 4)]
    n_intents: usize,
    #[arg(long, default_value_t = 6)]
    n_slot_labels: usize,
    #[arg(long, default_value_t = 200)]
    n_train: usize,
    #[arg(long, default_value_t = 50)]
    n_dev: usize,
    #[arg(long, default_value_t = 50)]
    n_test: usize,
}

#[derive(Debug, Args)]
struct AugmentArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    dictionary: PathBuf,
    /// Output corpus file.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    ratio: f64,
    /// Target languages (CSV); defaults to every language in the dictionary.
    #[arg(long)]
    languages: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    epoch: u64,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    ratio: Option<f64>,
    /// Code-switching target languages (CSV).
    #[arg(long)]
    languages: Option<String>,
    #[arg(long)]
    disable_intra: bool,
    #[arg(long)]
    disable_inter: bool,
    #[arg(long)]
    deploy: Option<Deploy>,
    /// Overrides `out_dir` from the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Only score examples whose `#lang` matches.
    #[arg(long)]
    language: Option<String>,
    /// Which network to score; defaults to the one recorded in the checkpoint.
    #[arg(long)]
    deploy: Option<Deploy>,
    /// Also write the report as JSON to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    #[arg(long, default_value_t = 8)]
    d_model: usize,
    #[arg(long, default_value_t = 2)]
    n_heads: usize,
    #[arg(long, default_value_t = 2)]
    n_blocks: usize,
    #[arg(long, default_value_t = 1e-6)]
    h: f64,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let rendered = e.render().to_string();
            let _ = if e.use_stderr() {
                err.write_all(rendered.as_bytes())
            } else {
                out.write_all(rendered.as_bytes())
            };
            return code;
        }
    };
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a, out),
        Command::Augment(a) => cmd_augment(a, out),
        Command::Train(a) => cmd_train(a, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::Gradcheck(a) => cmd_gradcheck(a, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            match e {
                Error::Config(_) => EXIT_USAGE,
                _ => EXIT_RUNTIME,
            }
        }
    }
}

fn csv(s: &str, what: &str) -> Result<Vec<String>> {
    let items: Vec<String> = s.split(',').map(str::trim).filter(|x| !x.is_empty()).map(String::from).collect();
    if items.is_empty() {
        return Err(Error::Config(vec![format!("{what} must list at least one language")]));
    }
    Ok(items)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

fn cmd_synth(a: SynthArgs, out: &mut dyn Write) -> Result<i32> {
    let spec = SynthSpec {
        languages: csv(&a.languages, "--languages")?,
        n_intents: a.n_intents,
        n_slot_labels: a.n_slot_labels,
        n_train: a.n_train,
        n_dev: a.n_dev,
        n_test: a.n_test,
        seed: a.seed,
    };
    let corpus = synth_corpus(&spec)?;
    for lang in &corpus.languages {
        let dir = a.out.join(lang);
        std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let s = corpus.split(lang);
        for (name, ex) in [("train", &s.train), ("dev", &s.dev), ("test", &s.test)] {
            write_corpus(dir.join(format!("{name}.txt")), ex)?;
        }
        let _ = writeln!(out, "{lang}: train {} dev {} test {}", s.train.len(), s.dev.len(), s.test.len());
    }
    let dict_path = a.out.join("dictionary.tsv");
    std::fs::write(&dict_path, corpus.dictionary.to_tsv()).map_err(io_err(&dict_path))?;
    let _ = writeln!(out, "dictionary: {} entries", corpus.dictionary.len());
    Ok(EXIT_OK)
}

fn cmd_augment(a: AugmentArgs, out: &mut dyn Write) -> Result<i32> {
    let examples = read_examples(&a.corpus)?;
    let dict = load_dictionary(&a.dictionary)?;
    let targets = match &a.languages {
        Some(s) => csv(s, "--languages")?,
        None => dict.languages(),
    };
    if targets.is_empty() {
        return Err(Error::Config(vec!["the dictionary has no languages; pass --languages".into()]));
    }
    let policy = CodeSwitchPolicy::new(a.ratio, targets, a.seed)?;
    let (switched, replaced) = augment_corpus_counted(&examples, &dict, &policy, a.epoch, Exec::default());
    write_corpus(&a.out, &switched)?;
    let words: usize = examples.iter().map(|e| e.len()).sum();
    let rate = if words == 0 { 0.0 } else { replaced as f64 / words as f64 };
    let _ = writeln!(out, "replaced {replaced} of {words} words (rate {rate:.4}) in {} utterances", examples.len());
    Ok(EXIT_OK)
}

/// A parsed run configuration file.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: PathBuf,
    pub dev: PathBuf,
    pub dictionary: PathBuf,
    pub out_dir: PathBuf,
    pub test_by_language: BTreeMap<String, PathBuf>,
    pub training: TrainConfig,
}

const TOP_KEYS: &[&str] = &["train", "dev", "dictionary", "out_dir", "test_by_language", "training"];

fn get<T: serde::de::DeserializeOwned>(v: &toml::Value, key: &str, problems: &mut Vec<String>) -> Option<T> {
    match v.clone().try_into::<T>() {
        Ok(x) => Some(x),
        Err(e) => {
            problems.push(format!("{key}: {}", e.to_string().trim()));
            None
        }
    }
}

fn set_training(cfg: &mut TrainConfig, key: &str, v: &toml::Value, problems: &mut Vec<String>) {
    let full = format!("training.{key}");
    let p = problems;
    macro_rules! field {
        ($target:expr) => {
            if let Some(x) = get(v, &full, p) {
                $target = x;
            }
        };
    }
    match key {
        "alpha" => field!(cfg.weights.alpha),
        "beta" => field!(cfg.weights.beta),
        "lambda" => field!(cfg.weights.lambda),
        "gamma" => field!(cfg.weights.gamma),
        "ratio" => field!(cfg.ratio),
        "target_languages" => field!(cfg.target_languages),
        "d_model" => field!(cfg.encoder.d_model),
        "n_heads" => field!(cfg.encoder.n_heads),
        "n_blocks" => field!(cfg.encoder.n_blocks),
        "ffn_dim" => field!(cfg.encoder.ffn_dim),
        "max_seq_len" => field!(cfg.encoder.max_seq_len),
        "dropout" => field!(cfg.encoder.dropout),
        "max_subword_pieces" => field!(cfg.max_subword_pieces),
        "base_lr" => field!(cfg.base_lr),
        "warmup_steps" => field!(cfg.warmup_steps),
        "batch_size" => field!(cfg.batch_size),
        "max_steps" => field!(cfg.max_steps),
        "eval_every" => field!(cfg.eval_every),
        "seed" => field!(cfg.seed),
        "disable_intra" => field!(cfg.disable_intra),
        "disable_inter" => field!(cfg.disable_inter),
        "deploy" => field!(cfg.deploy),
        "shared_init" => field!(cfg.shared_init),
        other => p.push(format!("unknown key training.{other}")),
    }
}

impl RunConfig {
    /// Parses configuration text. Relative paths resolve against `base`.
    /// Every problem (unknown key, wrong type, missing file, invalid value)
    /// is reported in one error.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(vec![e.to_string().trim().to_string()]))?;
        let mut problems = Vec::new();
        for k in table.keys() {
            if !TOP_KEYS.contains(&k.as_str()) {
                problems.push(format!("unknown key {k}"));
            }
        }
        let path = |key: &str, must_exist: bool, problems: &mut Vec<String>| -> PathBuf {
            let Some(v) = table.get(key) else {
                problems.push(format!("missing key {key}"));
                return PathBuf::new();
            };
            let Some(s) = get::<String>(v, key, problems) else {
                return PathBuf::new();
            };
            let p = base.join(s);
            if must_exist && !p.exists() {
                problems.push(format!("{key}: {} does not exist", p.display()));
            }
            p
        };
        let train = path("train", true, &mut problems);
        let dev = path("dev", true, &mut problems);
        let dictionary = path("dictionary", true, &mut problems);
        let out_dir = path("out_dir", false, &mut problems);

        let mut test_by_language = BTreeMap::new();
        if let Some(v) = table.get("test_by_language") {
            match v.as_table() {
                Some(t) => {
                    for (lang, pv) in t {
                        let key = format!("test_by_language.{lang}");
                        if let Some(s) = get::<String>(pv, &key, &mut problems) {
                            let p = base.join(s);
                            if !p.exists() {
                                problems.push(format!("{key}: {} does not exist", p.display()));
                            }
                            test_by_language.insert(lang.clone(), p);
                        }
                    }
                }
                None => problems.push("test_by_language must be a table of language = path".into()),
            }
        }

        let mut training = TrainConfig::default();
        if let Some(v) = table.get("training") {
            match v.as_table() {
                Some(t) => {
                    for (k, val) in t {
                        set_training(&mut training, k, val, &mut problems);
                    }
                }
                None => problems.push("training must be a table".into()),
            }
        }
        problems.extend(training.problems());

        if problems.is_empty() {
            Ok(Self {
                train,
                dev,
                dictionary,
                out_dir,
                test_by_language,
                training,
            })
        } else {
            Err(Error::Config(problems))
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::Config(vec![format!("config file {} does not exist", path.display())]),
            _ => Error::io(path, e),
        })?;
        Self::parse(&text, path.parent().unwrap_or(Path::new("")))
    }
}

fn cmd_train(a: TrainArgs, out: &mut dyn Write) -> Result<i32> {
    let mut rc = RunConfig::load(&a.config)?;
    let t = &mut rc.training;
    if let Some(s) = a.seed {
        t.seed = s;
    }
    if let Some(r) = a.ratio {
        t.ratio = r;
    }
    if let Some(l) = &a.languages {
        t.target_languages = csv(l, "--languages")?;
    }
    t.disable_intra |= a.disable_intra;
    t.disable_inter |= a.disable_inter;
    if let Some(d) = a.deploy {
        t.deploy = d;
    }
    if let Some(o) = a.out {
        rc.out_dir = o;
    }
    t.validate()?;

    let train_ex = read_examples(&rc.train)?;
    let dev_ex = read_examples(&rc.dev)?;
    let dict = load_dictionary(&rc.dictionary)?;
    let outcome = train(&rc.training, &train_ex, &dev_ex, &dict, Exec::default())?;
    outcome.write_to(&rc.out_dir)?;
    for r in &outcome.log {
        let _ = writeln!(
            out,
            "step {:>6}  lr {:.3e}  loss {:.5}  dev intent {:.4}  slot_f1 {:.4}  overall {:.4}",
            r.step, r.lr, r.total, r.dev_intent_acc, r.dev_slot_f1, r.dev_overall_acc
        );
    }
    let _ = writeln!(
        out,
        "best step {} ({}): dev overall {:.4}",
        outcome.best.header.step,
        outcome.best.header.deploy,
        outcome.best_dev.overall_accuracy()
    );
    if !rc.test_by_language.is_empty() {
        let corpora = rc
            .test_by_language
            .iter()
            .map(|(l, p)| Ok((l.clone(), read_examples(p)?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        let z = zero_shot_eval(&outcome.best, &corpora, Exec::default())?;
        for (lang, r) in &z.per_language {
            let _ = writeln!(
                out,
                "test {lang}: intent {:.4}  slot_f1 {:.4}  overall {:.4}",
                r.intent_accuracy(),
                r.slot_f1(),
                r.overall_accuracy()
            );
        }
        let m = &z.macro_average;
        let _ = writeln!(
            out,
            "test macro: intent {:.4}  slot_f1 {:.4}  overall {:.4}",
            m.intent_accuracy, m.slot_f1, m.overall_accuracy
        );
        let path = rc.out_dir.join("zero_shot.json");
        std::fs::write(&path, serde_json::to_string_pretty(&z)? + "\n").map_err(io_err(&path))?;
    }
    Ok(EXIT_OK)
}

fn cmd_eval(a: EvalArgs, out: &mut dyn Write) -> Result<i32> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let mut corpus = read_examples(&a.corpus)?;
    if let Some(l) = &a.language {
        corpus.retain(|e| &e.language == l);
    }
    let which = a.deploy.unwrap_or(ck.header.deploy);
    let h = &ck.header;
    let report = evaluate(ck.models.deployed(which), &h.labels, &h.subwords, &corpus, Exec::default())?;
    let _ = writeln!(out, "model {which} on {} utterances", report.all.n_examples);
    let _ = writeln!(out, "intent_accuracy {}", report.intent_accuracy());
    let _ = writeln!(out, "slot_f1 {}", report.slot_f1());
    let _ = writeln!(out, "overall_accuracy {}", report.overall_accuracy());
    let json = serde_json::to_string(&report)?;
    let _ = writeln!(out, "{json}");
    if let Some(p) = &a.out {
        std::fs::write(p, json + "\n").map_err(io_err(p))?;
    }
    Ok(EXIT_OK)
}

fn cmd_gradcheck(a: GradcheckArgs, out: &mut dyn Write) -> Result<i32> {
    if a.seeds == 0 {
        return Err(Error::Config(vec!["--seeds must be >= 1".into()]));
    }
    if !(1e-7..=1e-4).contains(&a.h) {
        return Err(Error::Config(vec![format!("--h must lie in [1e-7, 1e-4], got {}", a.h)]));
    }
    let opts = SuiteOptions {
        seeds: (0..a.seeds).collect(),
        h: a.h,
        tol: a.tol,
        d_model: a.d_model,
        n_heads: a.n_heads,
        n_blocks: a.n_blocks,
    };
    let checks = gradient_suite(&opts)?;
    let mut failed = 0;
    for c in &checks {
        let status = if c.passed() { "PASS" } else { "FAIL" };
        failed += usize::from(!c.passed());
        let _ = writeln!(
            out,
            "{status} {:<24} seed {}  coords {:>5}  max_rel_err {:.3e}",
            c.name,
            c.seed,
            c.report.coordinates.len(),
            c.report.max_rel_error
        );
    }
    let _ = writeln!(out, "{} checks, {} failed (tol {:e}, h {:e})", checks.len(), failed, a.tol, a.h);
    Ok(if failed == 0 { EXIT_OK } else { EXIT_RUNTIME })
}
