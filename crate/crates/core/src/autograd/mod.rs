//! Minimal reverse-mode automatic differentiation over dense tensors.
//!
//! Every operation eagerly computes its value and, when one of its inputs
//! requires a gradient, records itself as a graph node. [`Tensor::backward`]
//! walks the graph once in reverse topological order and accumulates into the
//! trainable leaves. Broadcasting is limited to repeating the right operand
//! over leading axes (`[.., d] op [d]`).

mod ops;
mod tensor;

use thiserror::Error;

pub use ops::{BinaryOp, CustomBackward};
pub use tensor::Tensor;

use crate::scalar::Real;

/// Target marker for positions excluded from the loss (padding).
pub const IGNORE: usize = usize::MAX;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("cannot broadcast {right:?} onto {left:?}")]
    Broadcast { left: Vec<usize>, right: Vec<usize> },
    #[error("invalid shape {0:?}")]
    InvalidShape(Vec<usize>),
    #[error("data of length {len} does not fill shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("axes {axes:?} are not a permutation for shape {shape:?}")]
    InvalidAxes { shape: Vec<usize>, axes: Vec<usize> },
    #[error("mask has {got} entries, expected {expected}")]
    MaskLength { expected: usize, got: usize },
    #[error("{0}: non-finite input")]
    NonFinite(&'static str),
    #[error("target {target} out of range for {classes} classes")]
    TargetOutOfRange { target: usize, classes: usize },
    #[error("index {id} out of range for table with {rows} rows")]
    IdOutOfRange { id: usize, rows: usize },
    #[error("expected a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
}

impl TensorError {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        TensorError::ShapeMismatch {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }
}

/// A named trainable tensor, e.g. `head_a.block0.attn.wq`.
#[derive(Debug, Clone)]
pub struct Parameter<T: Real> {
    pub name: String,
    pub tensor: Tensor<T>,
}

impl<T: Real> Parameter<T> {
    pub fn new(name: impl Into<String>, shape: &[usize], data: Vec<T>) -> Result<Self, TensorError> {
        Ok(Parameter {
            name: name.into(),
            tensor: Tensor::parameter(shape, data)?,
        })
    }
}
