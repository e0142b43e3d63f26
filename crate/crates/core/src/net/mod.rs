//! Joint detection + depth network: a toy trainable backbone behind the
//! input/output contract, Adam training and checkpoints.

pub mod checkpoint;
pub mod layers;
pub mod model;
pub mod train;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use model::{ModelConfig, NetworkOutputs, PriorMaps, ToyNet};
pub use train::{train_step, AdamParams, LrSchedule, TrainSample, TrainState};
