//! Loss, AMSGrad, learning-rate schedule, the training loop and the
//! ablation harness.

mod ablation;
mod config;
mod loss;
mod optimizer;
mod trainer;

pub use ablation::{
    ablate, grid_s_alpha, run_labeled, sweep, AblationFlag, AblationReport, RunSummary, SweepParam,
};
pub use config::{lr_at, TrainConfig};
pub use loss::{batch_loss, loss, loss_on};
pub use optimizer::OptimizerState;
pub use trainer::{
    evaluate, train, train_observed, CsvSink, EpochRecord, MetricSink, NullSink, StepInfo,
    TrainOutcome,
};
