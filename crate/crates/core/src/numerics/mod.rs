//! Dense tensors and reverse-mode differentiation.

mod graph;
mod rng;
mod tensor;

pub use graph::{Gradients, Graph, Param, ParamId, ParamStore, Var};
pub use rng::SeededRng;
pub use tensor::{matmul, softmax_rows, Real, Tensor};

use thiserror::Error;

/// Normalization epsilon used by every layer norm in the model.
pub const LAYER_NORM_EPS: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("shape {shape:?} does not match data length {len}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("rows have different lengths")]
    RaggedRows,
    #[error("index {index} out of range for size {bound}")]
    IndexOutOfRange { index: usize, bound: usize },
    #[error("backward needs a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("row {row} has every position masked")]
    FullyMasked { row: usize },
    #[error("{0}")]
    InvalidArgument(String),
}
