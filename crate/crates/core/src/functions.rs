//! Basic estimating functions and normalizers, plus closure adapters.

use std::sync::Arc;

use crate::engine::{EstimatingFunction, Normalizer};
use crate::error::Result;
use crate::linalg::Matrix;

/// `psi_t(theta) = 0`.
#[derive(Debug, Clone, Copy)]
pub struct ZeroFunction {
    dim: usize,
}

impl ZeroFunction {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl EstimatingFunction for ZeroFunction {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, _t: usize, _theta: &[f64], _x: f64, _past: &[f64]) -> Vec<f64> {
        vec![0.0; self.dim]
    }

    fn is_martingale_difference(&self) -> bool {
        true
    }
}

/// `psi(theta, x) = x - theta` for a scalar location parameter.
#[derive(Debug, Clone, Copy, Default)]
pub struct LocationResidual;

impl EstimatingFunction for LocationResidual {
    fn dim(&self) -> usize {
        1
    }

    fn eval(&self, _t: usize, theta: &[f64], x: f64, _past: &[f64]) -> Vec<f64> {
        vec![x - theta[0]]
    }

    fn is_martingale_difference(&self) -> bool {
        true
    }
}

/// Constant increments: `Gamma_t = Gamma_0 + t * increment`.
#[derive(Debug, Clone)]
pub struct StepNormalizer {
    initial: Matrix,
    increment: Matrix,
}

impl StepNormalizer {
    pub fn new(initial: Matrix, increment: Matrix) -> Self {
        assert_eq!(initial.dim(), increment.dim());
        Self { initial, increment }
    }

    /// `Gamma_t = t * I`.
    pub fn unit(dim: usize) -> Self {
        Self::new(Matrix::zeros(dim), Matrix::identity(dim))
    }
}

impl Normalizer for StepNormalizer {
    fn dim(&self) -> usize {
        self.increment.dim()
    }

    fn initial(&self) -> Matrix {
        self.initial.clone()
    }

    fn increment(&self, _t: usize, _theta: &[f64], _past: &[f64]) -> Result<Matrix> {
        Ok(self.increment.clone())
    }

    fn theta_free(&self) -> bool {
        true
    }
}

type PsiFn = dyn Fn(usize, &[f64], f64, &[f64]) -> Vec<f64> + Send + Sync;
type IncrementFn = dyn Fn(usize, &[f64], &[f64]) -> Result<Matrix> + Send + Sync;

/// An estimating function backed by a closure `(t, theta, x, past) -> psi`.
#[derive(Clone)]
pub struct FnEstimatingFunction {
    dim: usize,
    martingale_difference: bool,
    f: Arc<PsiFn>,
}

impl FnEstimatingFunction {
    pub fn new(
        dim: usize,
        f: impl Fn(usize, &[f64], f64, &[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            dim,
            martingale_difference: false,
            f: Arc::new(f),
        }
    }

    pub fn martingale_difference(mut self, flag: bool) -> Self {
        self.martingale_difference = flag;
        self
    }
}

impl EstimatingFunction for FnEstimatingFunction {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, t: usize, theta: &[f64], x: f64, past: &[f64]) -> Vec<f64> {
        (self.f)(t, theta, x, past)
    }

    fn is_martingale_difference(&self) -> bool {
        self.martingale_difference
    }
}

/// A normalizer backed by a closure `(t, theta, past) -> Delta Gamma_t`.
#[derive(Clone)]
pub struct FnNormalizer {
    dim: usize,
    initial: Matrix,
    theta_free: bool,
    f: Arc<IncrementFn>,
}

impl FnNormalizer {
    pub fn new(
        dim: usize,
        f: impl Fn(usize, &[f64], &[f64]) -> Result<Matrix> + Send + Sync + 'static,
    ) -> Self {
        Self {
            dim,
            initial: Matrix::zeros(dim),
            theta_free: false,
            f: Arc::new(f),
        }
    }

    pub fn theta_free(mut self, flag: bool) -> Self {
        self.theta_free = flag;
        self
    }

    pub fn with_initial(mut self, initial: Matrix) -> Self {
        assert_eq!(initial.dim(), self.dim);
        self.initial = initial;
        self
    }
}

impl Normalizer for FnNormalizer {
    fn dim(&self) -> usize {
        self.dim
    }

    fn initial(&self) -> Matrix {
        self.initial.clone()
    }

    fn increment(&self, t: usize, theta: &[f64], past: &[f64]) -> Result<Matrix> {
        (self.f)(t, theta, past)
    }

    fn theta_free(&self) -> bool {
        self.theta_free
    }
}
