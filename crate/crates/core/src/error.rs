//! Error type shared across the framework.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: expected last dimension to be even, got {dim}")]
    OddLastDim { op: &'static str, dim: usize },

    #[error("softmax over a fully masked row (row {row}): distribution undefined")]
    FullyMaskedRow { row: usize },

    #[error("backward requires a scalar loss, got {numel} elements")]
    NonScalarLoss { numel: usize },

    #[error("backward called twice on the same tape without zero_grads")]
    BackwardTwice,

    #[error("non-finite value in {what} at coordinate {coord}")]
    NonFinite { what: String, coord: usize },

    #[error("index {index} out of range for {what} of size {size}")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        size: usize,
    },

    #[error("{0}")]
    InvalidConfig(String),

    #[error("training diverged at step {step}: non-finite loss")]
    Diverged { step: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Error {
        Error::InvalidConfig(msg.into())
    }
}
