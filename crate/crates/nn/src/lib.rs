//! Minimal dense-tensor engine used by the pcapae autoencoder.
//!
//! Tensors are contiguous row-major buffers. A [`Tape`] records every
//! differentiable operation of one forward pass; [`Tape::backward`] walks it
//! in reverse to produce gradients that a [`ParamStore`] accumulates. Only
//! the layer set the convGRU autoencoder needs is provided: 2-D convolution
//! and its transpose, group normalization, channel dropout, pointwise
//! activations, and the MSE / BCE criteria.

pub mod checkpoint;
pub mod gradcheck;
pub mod kernels;
pub mod layers;
pub mod optim;
pub mod params;
mod scalar;
pub mod schedule;
mod tape;
mod tensor;

pub use layers::{Conv2d, ConvTranspose2d, GroupNorm};
pub use optim::{OptimizerKind, OptimizerState};
pub use params::{ParamId, ParamStore, Parameter};
pub use scalar::{DType, Scalar};
pub use schedule::{LrSchedule, LrScheduler};
pub use tape::{Activation, Gradients, LossKind, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

/// Errors raised by tensor operations, optimizers and checkpoint I/O.
#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("numeric fault: {0}")]
    NumericFault(String),
    #[error("optimizer state error: {0}")]
    State(String),
    #[error("unsupported checkpoint: {0}")]
    UnsupportedCheckpoint(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NnError>;
