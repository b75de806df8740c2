//! Training under a scheme split, evaluation metrics, prediction export and
//! a paired significance test.

mod metrics;
mod predict;
mod stats;
mod train;

pub use metrics::{cohen_kappa, evaluate, ConfusionMatrix, Evaluation};
pub use predict::{predict_export, predict_proba, PredictionRow, PredictionTable};
pub use stats::{wilcoxon_signed_rank, WilcoxonResult, EXACT_MAX_N};
pub use train::{
    fine_tune, train, write_history_jsonl, EpochMetrics, MetricsRecord, Phase, ProgressEvent, TrainConfig, TrainControl,
};
