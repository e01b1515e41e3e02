//! Sequential vs rayon execution of the two data-parallel hot paths:
//! per-example gradient computation for a batch, and corpus evaluation.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use kdslu::data::{synth_corpus, SynthSpec};
use kdslu::exec::{try_map_indexed, Exec};
use kdslu::model::DualModel;
use kdslu::pipeline::{evaluate, pair_gradients, prepare, TrainConfig};

fn benches(c: &mut Criterion) {
    let corpus = synth_corpus(&SynthSpec {
        n_train: 64,
        n_dev: 64,
        n_test: 1,
        ..SynthSpec::default()
    })
    .unwrap();
    let split = corpus.split(corpus.source());
    let cfg = TrainConfig::default();
    let prep = prepare(&cfg, &split.train, &split.dev, &corpus.dictionary).unwrap();
    let models = DualModel::init(&prep.encoder, &prep.labels, 0, false).unwrap();
    let weights = cfg.effective_weights();

    let batch: Vec<usize> = (0..16).collect();
    let mut g = c.benchmark_group("batch_gradients");
    g.sample_size(10);
    for mode in [Exec::Sequential, Exec::Parallel] {
        g.bench_with_input(BenchmarkId::from_parameter(format!("{mode:?}")), &mode, |b, &mode| {
            b.iter(|| {
                try_map_indexed(mode, &batch, |_, &i| {
                    let (gi, gs) = &prep.gold[i];
                    pair_gradients(&models, &prep.tokens[i], &prep.tokens[i], *gi, gs, &weights, None)
                })
                .unwrap()
            })
        });
    }
    g.finish();

    let mut g = c.benchmark_group("evaluate");
    g.sample_size(10);
    for mode in [Exec::Sequential, Exec::Parallel] {
        g.bench_with_input(BenchmarkId::from_parameter(format!("{mode:?}")), &mode, |b, &mode| {
            b.iter(|| evaluate(&models.model_c, &prep.labels, &prep.subwords, &split.dev, mode).unwrap())
        });
    }
    g.finish();
}

criterion_group!(parallel, benches);
criterion_main!(parallel);
