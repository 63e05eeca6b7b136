//! Dense row-major tensors and trainable parameters.

use super::{shape_err, NeuralError, Scalar};
use crate::rng::SeedRng;

/// Dense multi-dimensional array, row-major, with positive dimensions.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<F: Scalar> {
    shape: Vec<usize>,
    data: Vec<F>,
}

impl<F: Scalar> Tensor<F> {
    pub fn new(shape: Vec<usize>, data: Vec<F>) -> Result<Self, NeuralError> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(NeuralError::BadTensor(format!(
                "dimensions must be positive, got {shape:?}"
            )));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(NeuralError::BadTensor(format!(
                "shape {shape:?} holds {n} elements but {} were provided",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        assert!(n > 0, "zero-sized tensor shape {shape:?}");
        Self {
            shape: shape.to_vec(),
            data: vec![F::zero(); n],
        }
    }

    pub fn full(shape: &[usize], value: F) -> Self {
        let mut t = Self::zeros(shape);
        t.data.fill(value);
        t
    }

    /// Kernel-style init: seeded normal with the given standard deviation.
    pub fn randn(shape: &[usize], std: f64, rng: &mut SeedRng) -> Self {
        let mut t = Self::zeros(shape);
        for v in &mut t.data {
            *v = F::of(rng.normal() * std);
        }
        t
    }

    /// Uniform init in [lo, hi), mainly for test inputs.
    pub fn rand_uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut SeedRng) -> Self {
        let mut t = Self::zeros(shape);
        for v in &mut t.data {
            *v = F::of(rng.range(lo, hi));
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        false // dimensions are positive by construction
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    /// The four dimensions of an NCHW tensor.
    pub fn dims4(&self, ctx: &'static str) -> Result<[usize; 4], NeuralError> {
        match self.shape.as_slice() {
            &[n, c, h, w] => Ok([n, c, h, w]),
            other => Err(shape_err(ctx, "rank-4 tensor", format!("{other:?}"))),
        }
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.shape == other.shape
    }

    pub fn fill(&mut self, value: F) {
        self.data.fill(value);
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// self += alpha * other.
    pub fn axpy(&mut self, alpha: F, other: &Self) -> Result<(), NeuralError> {
        if !self.same_shape(other) {
            return Err(shape_err(
                "axpy",
                format!("{:?}", self.shape),
                format!("{:?}", other.shape),
            ));
        }
        for (a, &b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: F) {
        for v in &mut self.data {
            *v *= alpha;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Debug-mode guard: every op asserts its output is finite so NaN/Inf
    /// cannot propagate silently.
    #[inline]
    pub fn debug_assert_finite(&self, ctx: &'static str) {
        debug_assert!(self.all_finite(), "non-finite value produced by {ctx}");
        let _ = ctx;
    }

    /// Convert element type (f32 <-> f64).
    pub fn cast<G: Scalar>(&self) -> Tensor<G> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| G::of(v.wide())).collect(),
        }
    }
}

/// A parameter tensor paired with its gradient accumulator.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<F: Scalar> {
    pub value: Tensor<F>,
    pub grad: Tensor<F>,
}

impl<F: Scalar> Param<F> {
    pub fn new(value: Tensor<F>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(F::zero());
    }
}
