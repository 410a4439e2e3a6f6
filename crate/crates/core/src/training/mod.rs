//! 1-N training with smoothed binary cross-entropy and the auxiliary
//! qualifier-entity task.

mod config;
mod data;
mod trainer;

pub use config::TrainConfig;
pub use data::{
    build_training_set, permute_qualifiers, smoothed_bce_loss, smoothed_targets, TrainingSet,
};
pub use trainer::{BestModel, LogRecord, Trainer};
