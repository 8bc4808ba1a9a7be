//! Reverse-mode automatic differentiation over dense 2-D `f64` arrays.
//!
//! A [`Tape`] records every operation of a forward pass together with its
//! cached values. Operations return [`Var`] handles, which are only valid on
//! the tape that created them. [`Tape::backward`] walks the record in reverse
//! and accumulates gradients for every node that depends on a leaf created
//! with `requires_grad`.
//!
//! Besides the elementary kernels (matmul, softmax, layer norm, pointwise ops)
//! the tape provides two fused kernels used by the transformer: segmented
//! multi-head self-attention over stacked sequences and the weighted binary
//! focal loss.

mod matrix;
mod tape;

pub use matrix::Matrix;
pub(crate) use matrix::{gemm, Operand};
pub(crate) use tape::sigmoid;
pub use tape::{Tape, Var};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    Shape { op: &'static str, left: (usize, usize), right: (usize, usize) },
    #[error("{op}: non-finite input")]
    NonFinite { op: &'static str },
    #[error("backward requires a 1x1 loss, got {0:?}")]
    NotScalar((usize, usize)),
    #[error("tape has already been back-propagated; call zero_grad first")]
    AlreadyBackpropagated,
    #[error("tensor belongs to a different tape")]
    ForeignTensor,
    #[error("{0}")]
    InvalidArgument(String),
}

impl AutodiffError {
    pub(crate) fn shape(op: &'static str, left: (usize, usize), right: (usize, usize)) -> Self {
        Self::Shape { op, left, right }
    }
}
