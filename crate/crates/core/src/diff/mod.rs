//! Dense `f64` matrices with reverse-mode differentiation.

mod check;
mod tape;
mod tensor;

pub use check::{grad_check, grad_check_many};
pub use tape::{sigmoid, smooth_l1, softplus, Gradients, MapEntry, Tape, Var, SMOOTH_L1_BETA};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("{op}: row {row} has zero norm")]
    ZeroNormRow { op: &'static str, row: usize },
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("non-finite value encountered: {0}")]
    NonFiniteValue(String),
    #[error("finite-difference step {0} outside [1e-7, 1e-3]")]
    BadStep(f64),
}
