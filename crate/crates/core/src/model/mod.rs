//! Surface-inference network, its autodiff engine, training and checkpoints.

pub mod checkpoint;
pub mod graph;
pub mod network;
pub mod tensor;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use network::{LatentW, Model, ModelConfig, ObsInput};
pub use tensor::Tensor;
pub use train::{train, History, TrainConfig};

use crate::error::Result;
use crate::nurbs::HeliostatSurface;

/// Training objective: per-heliostat surface MAE in mm.
pub fn loss_mae(pred: &HeliostatSurface, truth: &HeliostatSurface) -> Result<f64> {
    crate::metrics::mean_abs_diff(&pred.flatten(), &truth.flatten())
}
