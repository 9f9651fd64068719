//! Minimal differentiable network core.
//!
//! Values are `f64` throughout. [`Graph`] records a forward pass and
//! differentiates it; [`ParamStore`] owns the named parameters; [`Encoder`],
//! [`ProjectionHead`] and [`EvaluationHead`] build on the layers in
//! [`layers`].

mod checkpoint;
mod encoder;
mod graph;
mod head;
pub mod layers;
mod params;
mod tensor;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use encoder::{Encoder, EncoderArch, EncoderConfig, EncoderVariant};
pub use graph::{batch_norm_forward, BatchNormOutput, BnStats, Graph, Phase, Var, WindowGeom, BN_EPS, BN_MOMENTUM};
pub use head::{EvaluationHead, HeadOutput, ProjectionHead, HIDDEN_DIM, PROJECTION_DIM};
pub use params::{BufferId, Gradients, ParamId, ParamStore};
pub use tensor::Tensor;

use crate::losses::LossError;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("batchnorm in train phase needs at least 2 items, got {0}")]
    BatchTooSmall(usize),
    #[error("no recorded forward graph for this value")]
    NoGraph,
    #[error("unknown parameter {0}")]
    UnknownParameter(String),
    #[error("invalid encoder config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
