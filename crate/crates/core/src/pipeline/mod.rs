//! Training, evaluation, gradient checking and ablation runs.

pub mod ablate;
pub mod config;
pub mod data;
pub mod evaluate;
pub mod gradcheck;
pub mod train;

pub use config::{OptimizerConfig, RunConfig};
pub use data::{Dataset, Sample};
pub use evaluate::{evaluate, load_checkpoint, predict, save_checkpoint, Prediction};
pub use train::{train, EarlyStopping, EpochRecord, StopReason, TrainOutcome};
