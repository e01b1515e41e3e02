//! End-to-end acceptance criteria. Prints one PASS/FAIL line per criterion
//! and exits nonzero if any fails.
//!
//! A3 and A4 train full-size toy models; expect roughly a quarter of an
//! hour on a single core.

mod common;

use std::collections::BTreeMap;
use std::f64::consts::LN_2;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use kdslu::data::{synth_corpus, Example, SynthCorpus, SynthSpec};
use kdslu::exec::Exec;
use kdslu::losses::jsd;
use kdslu::pipeline::{compute_report, span_f1, train, train_observed, zero_shot_eval, Decoded, TrainConfig, TrainOutcome};
use kdslu::verify::{gradient_suite, SuiteOptions};

type Outcome = std::result::Result<String, String>;

const A4_SEEDS: u64 = 5;
/// Held-out utterances per target language for the ablation comparison.
const A4_TEST_SIZE: usize = 300;

fn a1_loss_properties() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_sym: f64 = 0.0;
    let mut worst_disjoint: f64 = 0.0;
    for _ in 0..1000 {
        let k = rng.random_range(2..12);
        let p = common::random_distribution(&mut rng, k);
        let q = common::random_distribution(&mut rng, k);
        let pq = jsd(&p, &q).map_err(|e| e.to_string())?;
        let qp = jsd(&q, &p).map_err(|e| e.to_string())?;
        worst_sym = worst_sym.max((pq - qp).abs());
        if !(0.0..=LN_2).contains(&pq) {
            return Err(format!("jsd {pq} outside [0, ln 2]"));
        }
        let pp = jsd(&p, &p).map_err(|e| e.to_string())?;
        if pp != 0.0 {
            return Err(format!("jsd(P,P) = {pp}"));
        }
        // Disjoint supports: P on the first `cut` classes, Q on the rest.
        let cut = rng.random_range(1..k);
        let a = common::random_distribution(&mut rng, cut);
        let b = common::random_distribution(&mut rng, k - cut);
        let pd: Vec<f64> = a.iter().copied().chain(std::iter::repeat_n(0.0, k - cut)).collect();
        let qd: Vec<f64> = std::iter::repeat_n(0.0, cut).chain(b.iter().copied()).collect();
        let d = jsd(&pd, &qd).map_err(|e| e.to_string())?;
        worst_disjoint = worst_disjoint.max((d - LN_2).abs());
    }
    let elapsed = start.elapsed();
    if worst_sym > 1e-12 {
        return Err(format!("asymmetry {worst_sym:e}"));
    }
    if worst_disjoint > 1e-12 {
        return Err(format!("disjoint deviation from ln 2: {worst_disjoint:e}"));
    }
    within(elapsed, Duration::from_secs(5))?;
    Ok(format!(
        "1000 pairs, max asymmetry {worst_sym:.1e}, max |disjoint - ln2| {worst_disjoint:.1e}, {elapsed:.2?}"
    ))
}

fn a2_gradients() -> Outcome {
    let start = Instant::now();
    let checks = gradient_suite(&SuiteOptions::default()).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let failed: Vec<String> = checks
        .iter()
        .filter(|c| !c.passed())
        .map(|c| format!("{}@{} ({:.2e})", c.name, c.seed, c.report.max_rel_error))
        .collect();
    if !failed.is_empty() {
        return Err(format!("failed: {}", failed.join(", ")));
    }
    within(elapsed, Duration::from_secs(120))?;
    let worst = checks.iter().map(|c| c.report.max_rel_error).fold(0.0, f64::max);
    Ok(format!("{} checks over 5 seeds, worst rel err {worst:.2e}, {elapsed:.2?}", checks.len()))
}

fn source_splits(c: &SynthCorpus) -> (&[Example], &[Example]) {
    let s = c.split(c.source());
    (&s.train, &s.dev)
}

fn a3_overfit(corpus: &SynthCorpus) -> (Outcome, Option<TrainOutcome>) {
    let start = Instant::now();
    let (tr, dev) = source_splits(corpus);
    let cfg = TrainConfig {
        max_steps: 2000,
        ..TrainConfig::default()
    };
    let out = match train(&cfg, tr, dev, &corpus.dictionary, Exec::default()) {
        Ok(o) => o,
        Err(e) => return (Err(e.to_string()), None),
    };
    let elapsed = start.elapsed();
    let acc = out.best_dev.overall_accuracy();
    let res = if acc < 0.95 {
        Err(format!("dev overall accuracy {acc:.4} < 0.95"))
    } else {
        within(elapsed, Duration::from_secs(600)).map(|_| {
            format!(
                "dev overall {acc:.4} (intent {:.4}, slot F1 {:.4}) at step {}, {elapsed:.2?}",
                out.best_dev.intent_accuracy(),
                out.best_dev.slot_f1(),
                out.best.header.step
            )
        })
    };
    (res, Some(out))
}

fn a4_ablation(a3_corpus: &SynthCorpus, a3_run: Option<&TrainOutcome>) -> Outcome {
    let corpus = synth_corpus(&SynthSpec {
        n_test: A4_TEST_SIZE,
        ..SynthSpec::default()
    })
    .map_err(|e| e.to_string())?;
    let (tr, dev) = source_splits(&corpus);
    // The A3 run is the full configuration at seed 0 whenever the training
    // data coincide; reuse it rather than train it again.
    let same_data = source_splits(a3_corpus) == (tr, dev) && a3_corpus.dictionary.to_tsv() == corpus.dictionary.to_tsv();
    let targets: BTreeMap<String, Vec<Example>> = corpus
        .languages
        .iter()
        .filter(|l| *l != corpus.source())
        .map(|l| (l.clone(), corpus.split(l).test.clone()))
        .collect();

    let variants = [("full", false, false), ("w/o intra", true, false), ("w/o inter", false, true)];
    let mut means = Vec::new();
    for (name, disable_intra, disable_inter) in variants {
        let mut scores = Vec::new();
        for seed in 0..A4_SEEDS {
            let cfg = TrainConfig {
                max_steps: 2000,
                seed,
                disable_intra,
                disable_inter,
                ..TrainConfig::default()
            };
            let reuse = if same_data && seed == 0 && !disable_intra && !disable_inter { a3_run } else { None };
            let owned;
            let run = match reuse {
                Some(r) => r,
                None => {
                    owned = train(&cfg, tr, dev, &corpus.dictionary, Exec::default()).map_err(|e| e.to_string())?;
                    &owned
                }
            };
            let z = zero_shot_eval(&run.best, &targets, Exec::default()).map_err(|e| e.to_string())?;
            scores.push(z.macro_average.overall_accuracy);
        }
        let mean = scores.iter().sum::<f64>() / scores.len() as f64;
        println!("    {name:<10} mean {mean:.4}  per seed {scores:.4?}");
        means.push((name, mean));
    }
    let full = means[0].1;
    let summary = means.iter().map(|(n, m)| format!("{n} {m:.4}")).collect::<Vec<_>>().join(", ");
    if means[1..].iter().all(|(_, m)| full >= *m) {
        Ok(summary)
    } else {
        Err(summary)
    }
}

fn a5_metric_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for i in 0..1000 {
        let n = rng.random_range(1..15);
        let gold = common::random_tags(&mut rng, n);
        let rate = rng.random::<f64>();
        let pred = common::perturb(&mut rng, &gold, rate);
        let got = span_f1(&[pred.clone()], &[gold.clone()]).map_err(|e| e.to_string())?;
        let want = common::oracle_f1(&[pred.clone()], &[gold.clone()]);
        if (got - want).abs() > 1e-12 {
            return Err(format!("sequence {i}: span_f1 {got} vs oracle {want} for {pred:?} / {gold:?}"));
        }
    }
    let intents = ["a", "b", "c"];
    let langs = ["en", "de"];
    for r in 0..200 {
        let m = rng.random_range(1..12);
        let mut golds = Vec::new();
        let mut preds = Vec::new();
        for _ in 0..m {
            let n = rng.random_range(1..8);
            let tags = common::random_tags(&mut rng, n);
            let intent = intents[rng.random_range(0..3)];
            let g = Example::new(vec!["w".to_string(); n], tags.clone(), intent, langs[rng.random_range(0..2)])
                .map_err(|e| e.to_string())?;
            preds.push(Decoded {
                intent: if rng.random_bool(0.7) { intent.to_string() } else { intents[rng.random_range(0..3)].to_string() },
                slot_tags: if rng.random_bool(0.6) { tags } else { common::perturb(&mut rng, &g.slot_tags, 0.4) },
            });
            golds.push(g);
        }
        let report = compute_report(&preds, &golds).map_err(|e| e.to_string())?;
        for (scope, mx) in std::iter::once(("all", &report.all)).chain(report.per_language.iter().map(|(l, x)| (l.as_str(), x))) {
            if mx.overall_accuracy > mx.intent_accuracy.min(mx.slot_exact_match) {
                return Err(format!("report {r} ({scope}): overall {} > min(intent, exact)", mx.overall_accuracy));
            }
        }
    }
    Ok("1000 sequences match the oracle; overall <= min(intent, exact) on 200 reports".into())
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let o = Command::new(env!("CARGO_BIN_EXE_kdslu")).args(args).output().map_err(|e| e.to_string())?;
    if o.status.success() {
        Ok(())
    } else {
        Err(format!("kdslu {args:?} exited {:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stderr)))
    }
}

fn a6_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = dir.path();
    let p = |x: &str| root.join(x).display().to_string();
    run_cli(&["synth", "--out", &p("data"), "--n-train", "40", "--n-dev", "10", "--n-test", "10"])?;
    std::fs::write(
        root.join("run.toml"),
        "train = \"data/en/train.txt\"\ndev = \"data/en/dev.txt\"\ndictionary = \"data/dictionary.tsv\"\n\
         out_dir = \"out\"\n\n[test_by_language]\nde = \"data/de/test.txt\"\n\n\
         [training]\nmax_steps = 60\neval_every = 20\nbatch_size = 4\ndropout = 0.1\n",
    )
    .map_err(|e| e.to_string())?;
    for run in ["a", "b"] {
        run_cli(&["train", "--config", &p("run.toml"), "--seed", "42", "--out", &p(run)])?;
    }
    let mut compared = Vec::new();
    for f in ["metrics.jsonl", "best.ckpt", "zero_shot.json"] {
        let a = std::fs::read(root.join("a").join(f)).map_err(|e| e.to_string())?;
        let b = std::fs::read(root.join("b").join(f)).map_err(|e| e.to_string())?;
        if a != b {
            return Err(format!("{f} differs between runs"));
        }
        compared.push(format!("{f} ({} bytes)", a.len()));
    }
    Ok(format!("identical {}", compared.join(", ")))
}

fn a7_degenerate() -> Outcome {
    let corpus = synth_corpus(&SynthSpec {
        n_train: 60,
        n_dev: 8,
        n_test: 1,
        ..SynthSpec::default()
    })
    .map_err(|e| e.to_string())?;
    let (tr, dev) = source_splits(&corpus);
    let cfg = TrainConfig {
        max_steps: 100,
        eval_every: 1,
        ratio: 0.0,
        disable_intra: true,
        disable_inter: true,
        shared_init: true,
        seed: 9,
        ..TrainConfig::default()
    };
    let mut problems = Vec::new();
    let mut observed = 0;
    let out = train_observed(&cfg, tr, dev, &corpus.dictionary, Exec::default(), &mut |info| {
        observed += 1;
        let (o, c) = (&info.models.model_o, &info.models.model_c);
        let same = o.params().iter().zip(c.params()).all(|(a, b)| {
            a.data().iter().map(|x| x.to_bits()).eq(b.data().iter().map(|x| x.to_bits()))
        });
        if !same {
            problems.push(format!("step {}: parameters diverged", info.step));
        }
        if info.loss.l_intra.to_bits() != 0.0f64.to_bits() {
            problems.push(format!("step {}: l_intra = {:e}", info.step, info.loss.l_intra));
        }
    })
    .map_err(|e| e.to_string())?;
    let logged_nonzero = out.log.iter().filter(|r| r.l_intra.to_bits() != 0).count();
    if observed != 100 || out.log.len() != 100 {
        problems.push(format!("observed {observed} steps, logged {}", out.log.len()));
    }
    if logged_nonzero > 0 {
        problems.push(format!("{logged_nonzero} log records with nonzero l_intra"));
    }
    if problems.is_empty() {
        Ok("models bitwise identical and l_intra exactly 0 for all 100 steps".into())
    } else {
        Err(problems.into_iter().take(5).collect::<Vec<_>>().join("; "))
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    if elapsed <= limit {
        Ok(())
    } else {
        Err(format!("took {elapsed:.2?}, limit {limit:?}"))
    }
}

fn report(id: &str, title: &str, r: &Outcome) -> bool {
    match r {
        Ok(msg) => println!("PASS {id} {title}: {msg}"),
        Err(msg) => println!("FAIL {id} {title}: {msg}"),
    }
    r.is_ok()
}

fn main() {
    // `cargo test -- --list` and filters from the libtest protocol are not
    // meaningful here; honour `--list` so tooling does not run the suite.
    if std::env::args().any(|a| a == "--list") {
        for id in ["A1", "A2", "A3", "A4", "A5", "A6", "A7"] {
            println!("{id}: test");
        }
        return;
    }
    let mut ok = true;
    ok &= report("A1", "loss properties", &a1_loss_properties());
    ok &= report("A2", "gradient suite", &a2_gradients());
    let corpus = synth_corpus(&SynthSpec::default()).expect("default synthetic corpus");
    let (a3, a3_run) = a3_overfit(&corpus);
    ok &= report("A3", "overfit on the source language", &a3);
    ok &= report("A4", "directional ablation", &a4_ablation(&corpus, a3_run.as_ref()));
    ok &= report("A5", "metric oracle", &a5_metric_oracle());
    ok &= report("A6", "determinism", &a6_determinism());
    ok &= report("A7", "degenerate equivalence", &a7_degenerate());
    if !ok {
        std::process::exit(1);
    }
}
