//! Linear procedures `theta_t = theta_{t-1} + Gamma_t^{-1} (h_t - gamma_t theta_{t-1})`.

use std::sync::Arc;

use crate::engine::{EstimatingFunction, Normalizer, Recursion, Record, Trajectory};
use crate::error::{Error, Result};
use crate::linalg::{solve_linear, Matrix};

type ResponseFn = dyn Fn(usize, f64, &[f64]) -> Vec<f64> + Send + Sync;
type GainFn = dyn Fn(usize, &[f64]) -> Matrix + Send + Sync;

/// `h_t` (adapted), `gamma_t` (predictable) and the normalizer `Gamma_t`.
#[derive(Clone)]
pub struct LinearProcedureSpec {
    dim: usize,
    presample: usize,
    h: Arc<ResponseFn>,
    gamma: Arc<GainFn>,
    normalizer: Arc<dyn Normalizer>,
}

impl LinearProcedureSpec {
    /// `h(t, x_t, past)` and `gamma(t, past)` with an explicit normalizer.
    pub fn new(
        dim: usize,
        h: impl Fn(usize, f64, &[f64]) -> Vec<f64> + Send + Sync + 'static,
        gamma: impl Fn(usize, &[f64]) -> Matrix + Send + Sync + 'static,
        normalizer: Arc<dyn Normalizer>,
    ) -> Self {
        Self {
            dim,
            presample: 0,
            h: Arc::new(h),
            gamma: Arc::new(gamma),
            normalizer,
        }
    }

    /// The spec whose normalizer has increments `gamma_t`, starting from
    /// `initial`.
    pub fn matched(
        dim: usize,
        h: impl Fn(usize, f64, &[f64]) -> Vec<f64> + Send + Sync + 'static,
        gamma: impl Fn(usize, &[f64]) -> Matrix + Send + Sync + 'static,
        initial: Matrix,
    ) -> Self {
        let gamma: Arc<GainFn> = Arc::new(gamma);
        let normalizer = PredictableNormalizer {
            initial,
            gamma: gamma.clone(),
        };
        Self {
            dim,
            presample: 0,
            h: Arc::new(h),
            gamma,
            normalizer: Arc::new(normalizer),
        }
    }

    /// Reserve `presample` leading observations as history.
    pub fn with_presample(mut self, presample: usize) -> Self {
        self.presample = presample;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn presample(&self) -> usize {
        self.presample
    }

    pub fn estimating_function(&self) -> AffineEstimatingFunction {
        AffineEstimatingFunction {
            dim: self.dim,
            h: self.h.clone(),
            gamma: self.gamma.clone(),
        }
    }

    pub fn normalizer(&self) -> Arc<dyn Normalizer> {
        self.normalizer.clone()
    }
}

/// `psi_t(theta) = h_t - gamma_t theta`.
#[derive(Clone)]
pub struct AffineEstimatingFunction {
    dim: usize,
    h: Arc<ResponseFn>,
    gamma: Arc<GainFn>,
}

impl EstimatingFunction for AffineEstimatingFunction {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, t: usize, theta: &[f64], x: f64, past: &[f64]) -> Vec<f64> {
        let mut out = (self.h)(t, x, past);
        let g = (self.gamma)(t, past).mul_vec(theta);
        for (o, gi) in out.iter_mut().zip(g) {
            *o -= gi;
        }
        out
    }
}

/// `Gamma_t = Gamma_0 + sum_{s<=t} gamma_s`.
#[derive(Clone)]
pub struct PredictableNormalizer {
    initial: Matrix,
    gamma: Arc<GainFn>,
}

impl Normalizer for PredictableNormalizer {
    fn dim(&self) -> usize {
        self.initial.dim()
    }

    fn initial(&self) -> Matrix {
        self.initial.clone()
    }

    fn increment(&self, t: usize, _theta: &[f64], past: &[f64]) -> Result<Matrix> {
        Ok((self.gamma)(t, past))
    }

    fn theta_free(&self) -> bool {
        true
    }
}

/// The affine recursion driven through the generic engine.
pub fn linear_run(spec: &LinearProcedureSpec, theta0: &[f64], series: &[f64]) -> Result<Trajectory> {
    let psi = spec.estimating_function();
    let normalizer = spec.normalizer();
    Recursion::new(&psi, normalizer.as_ref())?.run_with_presample(theta0, series, spec.presample)
}

/// Direct evaluation of `theta_t = Gamma_t^{-1} (Gamma_0 theta_0 + sum_{s<=t} h_s)`,
/// valid when `Delta Gamma_t = gamma_t`.
///
/// With `Gamma_0 = 0` the start value drops out after the first step; with
/// `Gamma_0 = I` this is `Gamma_t^{-1}(theta_0 + sum h_s)`.
pub fn linear_closed_form(
    spec: &LinearProcedureSpec,
    theta0: &[f64],
    series: &[f64],
) -> Result<Trajectory> {
    let m = spec.dim;
    if theta0.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            found: theta0.len(),
        });
    }
    if series.len() <= spec.presample {
        return Err(Error::EmptySeries);
    }
    let normalizer = spec.normalizer();
    let initial = normalizer.initial();
    let mut numerator = initial.mul_vec(theta0);
    let mut acc = initial.clone();
    let mut previous = initial;
    let mut out = Trajectory::new(theta0.to_vec());

    for (k, i) in (spec.presample..series.len()).enumerate() {
        let t = k + 1;
        let past = &series[..i];
        let wrap = |e: Error| Error::StepFailed {
            step: t,
            source: Box::new(e),
        };
        acc += &normalizer.increment(t, theta0, past).map_err(wrap)?;
        let gamma_t = normalizer.finalize(t, acc.clone());
        let gain = (spec.gamma)(t, past);
        let mismatch = (&gamma_t - &previous).max_abs_diff(&gain);
        if mismatch > 1e-12 * (1.0 + gain.max_abs() + gamma_t.max_abs()) {
            return Err(Error::PreconditionViolated(format!(
                "normalizer increment differs from gamma_t by {mismatch:e} at step {t}"
            )));
        }
        for (n, h) in numerator.iter_mut().zip((spec.h)(t, series[i], past)) {
            *n += h;
        }
        let theta = solve_linear(&gamma_t, &numerator).map_err(wrap)?;
        out.records.push(Record {
            t,
            theta,
            gamma: gamma_t.clone(),
        });
        previous = gamma_t;
    }
    Ok(out)
}
