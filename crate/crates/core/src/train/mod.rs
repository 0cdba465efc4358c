//! Training: optimizer, batches, the epoch loop, checkpoints and run logs.

mod batch;
mod checkpoint;
mod config;
mod log;
mod optim;
mod trainer;

pub use batch::{augment, Batch};
pub use checkpoint::{Checkpoint, NamedTensor, TrainingMeta, FORMAT_VERSION, MAGIC};
pub use config::TrainConfig;
pub use log::{EpochRecord, RunLog};
pub use optim::{Adam, AdamConfig};
pub use trainer::{
    loss_digest, normalize_for, stream, train, Stream, TrainOutcome, Trainer, BEST_CHECKPOINT, LAST_CHECKPOINT, RUN_LOG,
};
