//! Optimisation and evaluation.

pub mod adam;
pub mod eval;
pub mod trainer;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use eval::{evaluate, predict_count, EvalEntry, EvalReport};
pub use trainer::{log_line, split_indices, train, train_from, train_step, TrainConfig, TrainOutcome};
