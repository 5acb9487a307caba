//! AdamW with cosine annealing, the patch-based training loop and
//! checkpoint persistence.

mod adamw;
mod checkpoint;
mod train;

pub use adamw::{adamw_step, cosine_lr, AdamWConfig, AdamWState};
pub use checkpoint::{
    blob_path, load_checkpoint, save_checkpoint, Checkpoint, CheckpointManifest, OptimizerEntry,
    TensorEntry, TensorRole,
};
pub use train::{train, LogRow, TrainConfig, TrainOutput, Trainer, LOG_HEADER, LONG_RUN_EPOCHS};
