//! AR(m) processes `X_i = theta^T (X_{i-1}, ..., X_{i-m}) + xi_i`.

use rand::RngExt;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{regressor_window, ConditionalModel};
use crate::engine::{EstimatingFunction, Normalizer, Recursion, Trajectory};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::quadrature::{normal_pdf, QuadratureSettings};
use crate::rng::SimRng;

/// Default ridge for the initial information matrix.
pub const DEFAULT_RIDGE: f64 = 1e-6;

/// Innovation density `g`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Innovation {
    Gaussian { sigma: f64 },
    Logistic { scale: f64 },
}

impl Innovation {
    pub fn validate(&self) -> Result<()> {
        let v = match *self {
            Innovation::Gaussian { sigma } => sigma,
            Innovation::Logistic { scale } => scale,
        };
        if v > 0.0 && v.is_finite() {
            Ok(())
        } else {
            Err(Error::PreconditionViolated(format!(
                "innovation scale must be positive, got {v}"
            )))
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        match *self {
            Innovation::Gaussian { sigma } => normal_pdf(x, 0.0, sigma),
            Innovation::Logistic { scale } => {
                let e = (-(x.abs()) / scale).exp();
                e / (scale * (1.0 + e) * (1.0 + e))
            }
        }
    }

    /// `g'(x) / g(x)`.
    pub fn score_ratio(&self, x: f64) -> f64 {
        match *self {
            Innovation::Gaussian { sigma } => -x / (sigma * sigma),
            Innovation::Logistic { scale } => -(x / (2.0 * scale)).tanh() / scale,
        }
    }

    /// `i^g = int (g'/g)^2 g`, closed form.
    pub fn fisher_information(&self) -> f64 {
        match *self {
            Innovation::Gaussian { sigma } => 1.0 / (sigma * sigma),
            Innovation::Logistic { scale } => 1.0 / (3.0 * scale * scale),
        }
    }

    /// `i^g` by quadrature of `(g'/g)^2 g`.
    pub fn fisher_information_quadrature(&self, q: &QuadratureSettings) -> Result<f64> {
        let f = |x: f64| vec![self.score_ratio(x).powi(2)];
        Ok(self.expectation(q, 0.0, &f, 1, &[])?[0])
    }

    pub fn sd(&self) -> f64 {
        match *self {
            Innovation::Gaussian { sigma } => sigma,
            Innovation::Logistic { scale } => scale * std::f64::consts::PI / 3f64.sqrt(),
        }
    }

    /// `E f(center + xi)`.
    pub fn expectation(
        &self,
        q: &QuadratureSettings,
        center: f64,
        f: &dyn Fn(f64) -> Vec<f64>,
        dim: usize,
        breakpoints: &[f64],
    ) -> Result<Vec<f64>> {
        match *self {
            Innovation::Gaussian { sigma } => {
                q.normal_expectation(f, dim, center, sigma, breakpoints)
            }
            Innovation::Logistic { .. } => {
                let density = |x: f64| self.pdf(x - center);
                q.density_expectation(f, dim, &density, center, self.sd(), breakpoints)
            }
        }
    }

    pub fn sample(&self, rng: &mut SimRng) -> f64 {
        match *self {
            Innovation::Gaussian { sigma } => {
                let z: f64 = StandardNormal.sample(rng);
                sigma * z
            }
            Innovation::Logistic { scale } => {
                let u: f64 = rng.random();
                let u = u.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON);
                scale * (u / (1.0 - u)).ln()
            }
        }
    }
}

/// An AR(m) model with known innovation density.
#[derive(Debug, Clone, PartialEq)]
pub struct ArModel {
    theta: Vec<f64>,
    innovation: Innovation,
    quadrature: QuadratureSettings,
}

impl ArModel {
    pub fn new(theta: Vec<f64>, innovation: Innovation) -> Result<Self> {
        if theta.is_empty() {
            return Err(Error::PreconditionViolated("AR order must be >= 1".into()));
        }
        innovation.validate()?;
        Ok(Self {
            theta,
            innovation,
            quadrature: QuadratureSettings::default(),
        })
    }

    pub fn with_quadrature(mut self, quadrature: QuadratureSettings) -> Self {
        self.quadrature = quadrature;
        self
    }

    pub fn order(&self) -> usize {
        self.theta.len()
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn innovation(&self) -> Innovation {
        self.innovation
    }

    pub fn i_g(&self) -> f64 {
        self.innovation.fisher_information()
    }

    fn prediction(&self, theta: &[f64], past: &[f64]) -> (Vec<f64>, f64) {
        let w = regressor_window(past, self.order());
        let mean = theta.iter().zip(&w).map(|(a, b)| a * b).sum();
        (w, mean)
    }
}

impl ConditionalModel for ArModel {
    fn dim(&self) -> usize {
        self.order()
    }

    fn presample(&self) -> usize {
        self.order()
    }

    fn density(&self, theta: &[f64], x: f64, past: &[f64]) -> f64 {
        let (_, mean) = self.prediction(theta, past);
        self.innovation.pdf(x - mean)
    }

    fn score(&self, theta: &[f64], x: f64, past: &[f64]) -> Vec<f64> {
        let (w, mean) = self.prediction(theta, past);
        let r = -self.innovation.score_ratio(x - mean);
        w.into_iter().map(|wi| r * wi).collect()
    }

    fn fisher_increment(&self, _theta: &[f64], past: &[f64]) -> Result<Matrix> {
        let w = regressor_window(past, self.order());
        Ok(Matrix::outer(&w, &w).scale(self.i_g()))
    }

    fn fisher_theta_free(&self) -> bool {
        true
    }

    fn expectation(
        &self,
        theta: &[f64],
        past: &[f64],
        f: &dyn Fn(f64) -> Vec<f64>,
        dim: usize,
        breakpoints: &[f64],
    ) -> Result<Vec<f64>> {
        let (_, mean) = self.prediction(theta, past);
        self.innovation
            .expectation(&self.quadrature, mean, f, dim, breakpoints)
    }

    fn total_mass(&self, theta: &[f64], past: &[f64]) -> Result<f64> {
        let (_, mean) = self.prediction(theta, past);
        let density = |x: f64| self.innovation.pdf(x - mean);
        let one = |_: f64| vec![1.0];
        Ok(self
            .quadrature
            .density_expectation(&one, 1, &density, mean, self.innovation.sd(), &[])?[0])
    }
}

/// Simulates `n` observations after discarding `burn_in`, from a zero
/// initial state.
pub fn ar_simulate(model: &ArModel, n: usize, burn_in: usize, rng: &mut SimRng) -> Vec<f64> {
    let m = model.order();
    let mut state = vec![0.0; m];
    let mut out = Vec::with_capacity(n);
    for i in 0..burn_in + n {
        let mean: f64 = model.theta.iter().zip(&state).map(|(a, b)| a * b).sum();
        let x = mean + model.innovation.sample(rng);
        state.rotate_right(1);
        state[0] = x;
        if i >= burn_in {
            out.push(x);
        }
    }
    out
}

/// `psi_t(theta) = -(g'/g)(X_t - theta^T w_t) w_t`.
#[derive(Debug, Clone)]
pub struct ArScore {
    order: usize,
    innovation: Innovation,
}

impl ArScore {
    pub fn new(order: usize, innovation: Innovation) -> Self {
        Self { order, innovation }
    }
}

impl EstimatingFunction for ArScore {
    fn dim(&self) -> usize {
        self.order
    }

    fn eval(&self, _t: usize, theta: &[f64], x: f64, past: &[f64]) -> Vec<f64> {
        let w = regressor_window(past, self.order);
        let mean: f64 = theta.iter().zip(&w).map(|(a, b)| a * b).sum();
        let r = -self.innovation.score_ratio(x - mean);
        w.into_iter().map(|wi| r * wi).collect()
    }

    fn is_martingale_difference(&self) -> bool {
        true
    }
}

/// `I_t = I_0 + i^g sum_{s<=t} w_s w_s^T`.
#[derive(Debug, Clone)]
pub struct ArFisherNormalizer {
    i_g: f64,
    initial: Matrix,
}

impl ArFisherNormalizer {
    pub fn new(i_g: f64, initial: Matrix) -> Self {
        Self { i_g, initial }
    }
}

impl Normalizer for ArFisherNormalizer {
    fn dim(&self) -> usize {
        self.initial.dim()
    }

    fn initial(&self) -> Matrix {
        self.initial.clone()
    }

    fn increment(&self, _t: usize, _theta: &[f64], past: &[f64]) -> Result<Matrix> {
        let w = regressor_window(past, self.dim());
        Ok(Matrix::outer(&w, &w).scale(self.i_g))
    }

    fn theta_free(&self) -> bool {
        true
    }
}

/// The AR likelihood recursion with recursively updated information.
/// The first `m` observations seed the regressor window.
pub fn ar_likelihood_run(
    model: &ArModel,
    theta0: &[f64],
    initial_information: Matrix,
    series: &[f64],
) -> Result<Trajectory> {
    let m = model.order();
    if initial_information.dim() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            found: initial_information.dim(),
        });
    }
    let psi = ArScore::new(m, model.innovation);
    let normalizer = ArFisherNormalizer::new(model.i_g(), initial_information);
    Recursion::new(&psi, &normalizer)?.run_with_presample(theta0, series, m)
}
