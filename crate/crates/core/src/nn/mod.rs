//! Minimal dense reverse-mode autodiff, MLPs, and AdamW.

mod gradcheck;
mod mlp;
mod optim;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GRAD_CHECK_STEP};
pub use mlp::{mlp_forward, Mlp};
pub use optim::{AdamW, AdamWConfig};
pub use params::{ParamSet, Parameter};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{Scalar, Tensor};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("dimension mismatch at {layer}: expected {expected}, got {got}")]
    Dimension { layer: String, expected: usize, got: usize },
    #[error("backward needs a scalar loss, got a {rows}x{cols} tensor")]
    NonScalarLoss { rows: usize, cols: usize },
    #[error("tape already consumed by a backward pass; re-record the forward pass")]
    TapeConsumed,
    #[error("non-finite values in {what}")]
    NonFinite { what: String },
}
