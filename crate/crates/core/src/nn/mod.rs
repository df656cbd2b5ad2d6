//! Small sequential neural-network engine: tensors, layer kernels with explicit
//! backward passes, SGD, checkpoints and a finite-difference gradient checker.

mod checkpoint;
pub mod gradcheck;
mod layer;
pub(crate) mod linalg;
mod model;
pub mod ops;
mod optim;
mod tensor;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, CheckpointTensor};
pub use layer::{Layer, LayerSpec};
pub use model::{Gradients, Model};
pub use ops::{ActivationKind, PoolKind};
pub use optim::Sgd;
pub use tensor::Tensor;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("kernel {kernel} does not fit a padded {height}x{width} input")]
    KernelLargerThanInput { kernel: usize, height: usize, width: usize },
    #[error("window {window} does not fit a padded {height}x{width} input")]
    WindowLargerThanInput { window: usize, height: usize, width: usize },
    #[error("batch norm in training mode needs at least two samples")]
    SingletonBatchInTrainMode,
    #[error("backward called without a cached training-mode forward pass")]
    NoForwardCache,
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch { expected: Vec<usize>, actual: Vec<usize> },
    #[error("expected rank {expected}, got shape {actual:?}")]
    RankMismatch { expected: usize, actual: Vec<usize> },
    #[error("layer {index} ({layer}) produces a non-positive extent from input {input:?}")]
    ShapeUnderflow { index: usize, layer: String, input: Vec<usize> },
    #[error("invalid layer: {0}")]
    InvalidLayer(String),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
