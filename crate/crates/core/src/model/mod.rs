//! Encoder, heads, dual-model pairing and checkpoints.

mod checkpoint;
mod config;
mod dual;
mod slu;

pub use checkpoint::{Checkpoint, CheckpointHeader, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::EncoderConfig;
pub use dual::{Deploy, DualModel};
pub use slu::{init_bound, Forward, PredictionBundle, SluModel};

