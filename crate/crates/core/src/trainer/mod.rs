//! k-pass training, evaluation, and the study runners built on them.

mod optim;
pub mod stats;
pub mod study;
mod train;

pub use optim::{clip_global_norm, global_norm, AdamSettings, OptimizerState};
pub use stats::{compare_runs, Comparison};
pub use study::{run_ablation, run_kpass, run_size_study, StudyOutput, Table};
pub use train::{
    eval_loss, evaluate, prepare_data, run_seed, run_seed_on, run_training, train_step,
    EpochRecord, RunOutput, RunResult, Splits, StepSettings,
};
