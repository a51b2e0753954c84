//! Encoder-only transformer forecaster in two variants that differ only in
//! their normalization layers, with training and prediction loops.

mod checkpoint;
mod model;
mod train;

pub use checkpoint::{Checkpoint, ParamRecord, CHECKPOINT_FORMAT};
pub use model::{positional_encoding, Forecaster, ModelConfig, NormKind};
pub use train::{evaluate_mse, train, EpochRecord, TrainOptions, TrainedModel};
