//! Training, evaluation with voting, ablation sweeps, benchmarking,
//! gradient checks and checkpoint persistence.

mod ablate;
mod bench;
mod checkpoint;
mod eval;
mod gradsuite;
mod metrics;
mod train;

pub use ablate::{ablate, base_eval, graph_edges, AblationRow, AblationTable, SweepSpec, Toggle, CSV_HEADER};
pub use bench::{bench, BenchConfig, BenchReport};
pub use checkpoint::{
    checkpoint_bytes, checkpoint_from_bytes, load_checkpoint, save_checkpoint, TrainState, CHECKPOINT_VERSION,
};
pub use eval::{evaluate, metrics_of, predict, prepare_cloud, EvalConfig, Prediction};
pub use gradsuite::{generic_state, layer_cases, model_case, model_cases, random_points, run_suite, GradCase, GradSuiteConfig};
pub use metrics::{mean_class_accuracy, miou, overall_accuracy, Confusion, MetricsReport};
pub use train::{train, train_step, EpochLog, TrainConfig, TrainOptions, TrainOutcome, BN_MOMENTUM};
