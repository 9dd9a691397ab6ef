//! Conditionally additive exponential families of Markov chains.
//!
//! Transition density `h(x, y) exp(theta m(y, x) - gamma(theta) h(x))`, so the
//! conditional Fisher information is `gamma''(theta) H_t` with
//! `H_t = sum_{s<=t} h(X_{s-1})`.

use std::sync::Arc;

use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::Serialize;
use statrs::function::gamma::ln_gamma;

use super::ConditionalModel;
use crate::engine::{presample_len, EstimatingFunction, Normalizer, Recursion, Trajectory};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, SINGULARITY_THRESHOLD};
use crate::rng::SimRng;

/// The scalar family `(gamma, h, m)` with its transition sampler.
pub trait CaefFamily: Send + Sync {
    fn gamma(&self, theta: f64) -> f64;
    fn gamma_dot(&self, theta: f64) -> f64;
    fn gamma_ddot(&self, theta: f64) -> f64;
    fn h(&self, x: f64) -> f64;
    fn m_stat(&self, y: f64, x: f64) -> f64;
    /// Draws `X_t` given `X_{t-1} = x`.
    fn sample_transition(&self, theta: f64, x: f64, rng: &mut SimRng) -> f64;
}

/// Galton–Watson branching with Poisson offspring, canonical parameter
/// `lambda = log(mean offspring)`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GaltonWatsonPoisson;

pub fn galton_watson_poisson() -> GaltonWatsonPoisson {
    GaltonWatsonPoisson
}

/// Above this mean, Poisson draws use the normal approximation.
const POISSON_NORMAL_CUTOFF: f64 = 1e12;

impl CaefFamily for GaltonWatsonPoisson {
    fn gamma(&self, theta: f64) -> f64 {
        theta.exp()
    }

    fn gamma_dot(&self, theta: f64) -> f64 {
        theta.exp()
    }

    fn gamma_ddot(&self, theta: f64) -> f64 {
        theta.exp()
    }

    fn h(&self, x: f64) -> f64 {
        x
    }

    fn m_stat(&self, y: f64, _x: f64) -> f64 {
        y
    }

    fn sample_transition(&self, theta: f64, x: f64, rng: &mut SimRng) -> f64 {
        let mean = theta.exp() * x;
        if mean <= 0.0 {
            0.0
        } else if mean < POISSON_NORMAL_CUTOFF {
            Poisson::new(mean).expect("finite positive mean").sample(rng)
        } else {
            let z: f64 = StandardNormal.sample(rng);
            (mean + mean.sqrt() * z).round().max(0.0)
        }
    }
}

/// `l_t(theta) = m(X_t, X_{t-1}) - gamma'(theta) h(X_{t-1})`.
#[derive(Clone)]
pub struct CaefScore {
    family: Arc<dyn CaefFamily>,
}

impl CaefScore {
    pub fn new(family: Arc<dyn CaefFamily>) -> Self {
        Self { family }
    }
}

impl EstimatingFunction for CaefScore {
    fn dim(&self) -> usize {
        1
    }

    fn eval(&self, _t: usize, theta: &[f64], x: f64, past: &[f64]) -> Vec<f64> {
        let prev = *past.last().expect("CAEF needs X_{t-1}");
        vec![self.family.m_stat(x, prev) - self.family.gamma_dot(theta[0]) * self.family.h(prev)]
    }

    fn is_martingale_difference(&self) -> bool {
        true
    }
}

/// `Gamma_t(theta) = gamma''(theta) (H_0 + sum_{s<=t} h(X_{s-1}))`.
#[derive(Clone)]
pub struct CaefNormalizer {
    family: Arc<dyn CaefFamily>,
    h0: f64,
}

impl CaefNormalizer {
    pub fn new(family: Arc<dyn CaefFamily>, h0: f64) -> Self {
        Self { family, h0 }
    }

    /// `H_0 + sum_{s<=t} h(X_{s-1})`.
    pub fn h_sum(&self, t: usize, past: &[f64]) -> Result<f64> {
        let offset = presample_len(t, past)?;
        if offset == 0 {
            return Err(Error::PreconditionViolated(
                "CAEF recursion needs X_0 as presample".into(),
            ));
        }
        Ok(self.h0 + past[offset - 1..].iter().map(|x| self.family.h(*x)).sum::<f64>())
    }
}

impl Normalizer for CaefNormalizer {
    fn dim(&self) -> usize {
        1
    }

    fn increment(&self, t: usize, theta: &[f64], past: &[f64]) -> Result<Matrix> {
        let prev = *past.last().ok_or(Error::EmptySeries)?;
        let seed = if t == 1 { self.h0 } else { 0.0 };
        Ok(Matrix::scalar(
            self.family.gamma_ddot(theta[0]) * (seed + self.family.h(prev)),
        ))
    }

    fn cumulative(&self, t: usize, theta: &[f64], past: &[f64]) -> Result<Matrix> {
        Ok(Matrix::scalar(
            self.family.gamma_ddot(theta[0]) * self.h_sum(t, past)?,
        ))
    }
}

/// Per-step CAEF state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CaefState {
    pub t: usize,
    pub theta_hat: f64,
    pub h: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaefRun {
    pub trajectory: Trajectory,
    pub states: Vec<CaefState>,
}

/// The likelihood recursion
/// `theta_t = theta_{t-1} + (gamma''(theta_{t-1}) H_t)^{-1} (m(X_t, X_{t-1}) - gamma'(theta_{t-1}) h(X_{t-1}))`.
///
/// `series[0]` is `X_0`; estimation runs over `series[1..]`.
pub fn caef_run(
    family: Arc<dyn CaefFamily>,
    theta0: f64,
    series: &[f64],
    h0: f64,
) -> Result<CaefRun> {
    if !(h0 >= 0.0) {
        return Err(Error::PreconditionViolated(format!("H_0 must be >= 0, got {h0}")));
    }
    if series.len() < 2 {
        return Err(Error::EmptySeries);
    }
    let psi = CaefScore::new(family.clone());
    let normalizer = CaefNormalizer::new(family.clone(), h0);
    let recursion = Recursion::new(&psi, &normalizer)?;
    let mut state = recursion.start(&[theta0])?;
    let mut trajectory = Trajectory::new(vec![theta0]);
    let mut states = Vec::with_capacity(series.len() - 1);
    let mut h = h0;

    for i in 1..series.len() {
        let t = i;
        h += family.h(series[i - 1]);
        let value = family.gamma_ddot(state.theta[0]) * h;
        let wrap = |e: Error| Error::StepFailed {
            step: t,
            source: Box::new(e),
        };
        if !(value > SINGULARITY_THRESHOLD) {
            return Err(wrap(Error::DegenerateNormalizer { value }));
        }
        recursion.step(&mut state, series[i], &series[..i]).map_err(wrap)?;
        trajectory.records.push(crate::engine::Record {
            t,
            theta: state.theta.clone(),
            gamma: state.gamma.clone(),
        });
        states.push(CaefState {
            t,
            theta_hat: state.theta[0],
            h,
        });
    }
    Ok(CaefRun { trajectory, states })
}

/// `b_t(theta, u) = h(X_{t-1}) (gamma'(theta) - gamma'(theta + u))` for the score.
pub fn caef_drift(family: &dyn CaefFamily, theta: f64, u: f64, prev: f64) -> f64 {
    family.h(prev) * (family.gamma_dot(theta) - family.gamma_dot(theta + u))
}

/// A Galton–Watson Poisson chain viewed as a conditional model of `X_t`
/// given `X_{t-1}`. Expectations are exact sums over the Poisson mass.
#[derive(Debug, Clone, Copy, Default)]
pub struct CaefModel {
    family: GaltonWatsonPoisson,
}

/// Largest Poisson mean for which expectations are summed exactly.
const MAX_SUMMED_MEAN: f64 = 1e8;

impl CaefModel {
    pub fn galton_watson() -> Self {
        Self::default()
    }

    fn mean(&self, theta: &[f64], past: &[f64]) -> f64 {
        let prev = *past.last().expect("CAEF needs X_{t-1}");
        self.family.gamma_dot(theta[0]) * self.family.h(prev)
    }

    fn support(mean: f64) -> Result<(u64, u64)> {
        if mean > MAX_SUMMED_MEAN {
            return Err(Error::PreconditionViolated(format!(
                "Poisson mean {mean:e} too large for exact summation"
            )));
        }
        let spread = 12.0 * mean.sqrt() + 30.0;
        let lo = (mean - spread).floor().max(0.0) as u64;
        let hi = (mean + spread).ceil() as u64;
        Ok((lo, hi))
    }

    fn pmf(mean: f64, y: f64) -> f64 {
        if mean == 0.0 {
            return if y == 0.0 { 1.0 } else { 0.0 };
        }
        (y * mean.ln() - mean - ln_gamma(y + 1.0)).exp()
    }
}

impl ConditionalModel for CaefModel {
    fn dim(&self) -> usize {
        1
    }

    fn presample(&self) -> usize {
        1
    }

    fn density(&self, theta: &[f64], x: f64, past: &[f64]) -> f64 {
        if x < 0.0 || x.fract() != 0.0 {
            return 0.0;
        }
        Self::pmf(self.mean(theta, past), x)
    }

    fn score(&self, theta: &[f64], x: f64, past: &[f64]) -> Vec<f64> {
        let prev = *past.last().expect("CAEF needs X_{t-1}");
        vec![self.family.m_stat(x, prev) - self.family.gamma_dot(theta[0]) * self.family.h(prev)]
    }

    fn fisher_increment(&self, theta: &[f64], past: &[f64]) -> Result<Matrix> {
        let prev = *past.last().ok_or(Error::EmptySeries)?;
        Ok(Matrix::scalar(
            self.family.gamma_ddot(theta[0]) * self.family.h(prev),
        ))
    }

    fn expectation(
        &self,
        theta: &[f64],
        past: &[f64],
        f: &dyn Fn(f64) -> Vec<f64>,
        dim: usize,
        _breakpoints: &[f64],
    ) -> Result<Vec<f64>> {
        let mean = self.mean(theta, past);
        let (lo, hi) = Self::support(mean)?;
        let mut acc = vec![0.0; dim];
        for y in lo..=hi {
            let y = y as f64;
            let p = Self::pmf(mean, y);
            if p == 0.0 {
                continue;
            }
            let v = f(y);
            if v.iter().any(|c| !c.is_finite()) {
                return Err(Error::NonFiniteIntegrand { at: y });
            }
            for (a, c) in acc.iter_mut().zip(v) {
                *a += p * c;
            }
        }
        Ok(acc)
    }

    fn total_mass(&self, theta: &[f64], past: &[f64]) -> Result<f64> {
        let mean = self.mean(theta, past);
        let (lo, hi) = Self::support(mean)?;
        Ok((lo..=hi).map(|y| Self::pmf(mean, y as f64)).sum())
    }
}
