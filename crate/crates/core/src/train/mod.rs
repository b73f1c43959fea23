//! Losses, AdamW, learning-rate/early-stopping rules, the training loop
//! and checkpoints.

pub mod checkpoint;
pub mod fit;
pub mod loss;
pub mod optim;
pub mod schedule;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta};
pub use fit::{
    epoch_order, fit, fit_with, mean_loss, predict_scores, Control, EpochRecord, FitOutcome, History, TrainConfig,
};
pub use loss::{bce_with_logits, loss, softmax_cross_entropy, Targets};
pub use optim::{adamw_update, AdamW, AdamWConfig, Moments};
pub use schedule::{EarlyStopping, PlateauScheduler, StopDecision};
