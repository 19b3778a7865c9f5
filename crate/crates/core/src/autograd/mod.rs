//! Dense `f64` tensors with reverse-mode automatic differentiation.
//!
//! Only the primitives the rating model needs are provided: matrix product,
//! pointwise arithmetic with trailing-vector broadcasting, masked softmax,
//! axis reductions, row gather/scatter, column concatenation and reshape.

mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use gradcheck::{grad_check, relative_error, GradCheckConfig, GradCheckReport, ParamCheck, RELATIVE_ERROR_FLOOR};
pub use graph::{Elementwise, Graph, Reduction, Var};
#[cfg(test)]
pub(crate) use graph::matmul_raw;
pub use params::{Bindings, Param, ParamStore};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutogradError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("shape {shape:?} does not hold {len} elements")]
    InvalidShape { shape: Vec<usize>, len: usize },
    #[error("log of non-positive value {value} at index {index}")]
    Domain { index: usize, value: f64 },
    #[error("softmax row {row} has no unmasked entry")]
    FullyMasked { row: usize },
    #[error("invalid axis {axis:?} for shape {shape:?}")]
    InvalidAxis { axis: Option<usize>, shape: Vec<usize> },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("row index {index} out of range (or repeated) for {rows} rows")]
    IndexOutOfRange { index: usize, rows: usize },
    #[error("{0:?} is binary and needs a second operand")]
    MissingOperand(Elementwise),
    #[error("weighted_sum needs weights")]
    MissingWeights,
}

#[cfg(test)]
mod tests;
