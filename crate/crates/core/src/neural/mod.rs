//! Minimal dense-tensor numeric core: the layers, losses, and optimizer the
//! model needs, each with an explicit backward pass.
//!
//! No tape autodiff — the network is small and fixed, and explicit gradients
//! keep every layer testable in isolation against finite differences (see
//! [`gradcheck`]). Everything is generic over [`Scalar`]; training runs at
//! `f32` while the `f64` instantiation provides the high-precision shadow
//! the gradient checker differentiates numerically.
//!
//! Tensors are value-semantic and operations are pure, so concurrent use is
//! safe; parameter mutation happens only in [`adam::AdamState::step`], which
//! takes exclusive access.

pub mod adam;
pub mod gradcheck;
pub mod ops;
pub mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{grad_check, standard_suite, CheckedOp, GradCheckCase, GradCheckReport};
pub use tensor::{Param, Tensor};

use num_traits::{Float, NumAssignOps, NumCast};
use thiserror::Error;

/// Floating-point element type of tensors. Implemented for `f32` and `f64`.
pub trait Scalar:
    Float + NumAssignOps + std::fmt::Debug + std::fmt::Display + Default + Send + Sync + 'static
{
    /// Lossy conversion from `f64`; values are always in range here.
    fn of(x: f64) -> Self {
        <Self as NumCast>::from(x).expect("finite f64 converts to any Scalar")
    }

    /// Widen to `f64` (exact for both supported types).
    fn wide(self) -> f64 {
        <f64 as NumCast>::from(self).expect("Scalar widens to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("shape mismatch in {ctx}: expected {expected}, found {found}")]
    ShapeMismatch {
        ctx: &'static str,
        expected: String,
        found: String,
    },
    #[error("instance norm needs at least 2 spatial elements, found {0}")]
    DegenerateSpatial(usize),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("bad tensor: {0}")]
    BadTensor(String),
}

pub(crate) fn shape_err(
    ctx: &'static str,
    expected: impl Into<String>,
    found: impl Into<String>,
) -> NeuralError {
    NeuralError::ShapeMismatch {
        ctx,
        expected: expected.into(),
        found: found.into(),
    }
}
