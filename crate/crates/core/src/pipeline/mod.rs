//! Training, evaluation and metrics.

mod eval;
mod metrics;
mod train;

pub use eval::{decode, evaluate, zero_shot_eval, ZeroShotReport};
pub use metrics::{
    compute_report, extract_spans, intent_accuracy, macro_average, overall_accuracy, span_counts, span_f1, Decoded,
    Metrics, MetricsReport, Span, SpanCounts,
};
pub use train::{
    pair_gradients, prepare, train, train_observed, training_subwords, LogRecord, PairGradients, Prepared, StepInfo,
    TrainConfig, TrainOutcome, BEST_CHECKPOINT_FILE, METRICS_FILE,
};
