//! A deliberately small reverse-mode differentiation kernel.
//!
//! Values are recorded on a [`Tape`] as operations are applied; calling
//! [`Tape::backward`] on a scalar node walks the tape in reverse and returns
//! gradients for every node that depends on a parameter leaf. The operation set
//! is exactly what a per-token attention Q-network needs: linear layers, batch
//! normalization, ReLU, dropout, ragged multi-head self-attention, segment
//! mean pooling, action gathering and the Huber loss. [`Adam`] updates
//! parameter tensors from the returned gradients.

mod adam;
mod layers;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use layers::{
    batch_norm, dropout, dropout_mask, huber_value, multihead_attention, multihead_attention_ragged,
    AttentionParams, BatchNormStats, Mode,
};
pub use tape::{BranchLog, Gradients, HuberBranch, Segment, Tape, Var};
pub use tensor::{Real, Tensor};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("invalid batch: {0}")]
    InvalidBatch(String),
    #[error("invalid mask: {0}")]
    InvalidMask(String),
    #[error("graph error: {0}")]
    Graph(String),
    #[error("numeric error: {0}")]
    Numeric(String),
}
