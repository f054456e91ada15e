//! Optimizers, losses, the training loop, evaluation and reports.

mod compare;
mod evaluate;
pub mod export;
mod loss;
mod metrics;
mod optim;
mod report;
mod trainer;

pub use compare::{
    compare_variants, full_scale_reference, run_variant, summarize, Backbone, ComparisonRow, FullScaleReference,
    RunSettings, Spread, VariantRun,
};
pub use evaluate::{evaluate, predict, score_method, EvalConfig, Evaluation, Prediction, VariationalScore};
pub use loss::{cross_entropy, graph_loss, variational_loss, LossBreakdown, LossVars};
pub use metrics::{f1_score, ClassificationMetrics};
pub use optim::{OptimizerConfig, OptimizerKind, OptimizerState};
pub use report::{format_ratio, ExampleRecord, Histogram, Quartiles, UncertaintyReport, HISTOGRAM_BINS};
pub use trainer::{dataset_loss, train, EpochRecord, Phase, TrainConfig, TrainLog, TrainOutcome};
