//! The recursion engine.
//!
//! One step maps `(t-1, theta_{t-1}, Gamma_{t-1})` to
//! `theta_t = theta_{t-1} + Gamma_t(theta_{t-1})^{-1} psi_t(theta_{t-1})`.
//!
//! Observations are scalar. At step `t` the estimating function sees `X_t` and
//! the slice of everything before it; the normalizer sees only that slice, so
//! predictability holds by construction. A run may reserve a presample prefix
//! (AR start-up windows, the `X_0` of a Markov chain) that is visible as
//! history but never produces a step.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{solve_linear, Matrix};

/// A sequence of estimating functions `psi_t(theta)`.
pub trait EstimatingFunction: Send + Sync {
    fn dim(&self) -> usize;

    /// `psi_t(theta)` evaluated at `X_t = x`; `past` holds every earlier
    /// observation including the presample.
    fn eval(&self, t: usize, theta: &[f64], x: f64, past: &[f64]) -> Vec<f64>;

    /// Whether `psi_t(theta)` is a martingale difference at the true parameter.
    fn is_martingale_difference(&self) -> bool {
        false
    }

    /// Values of `x` where `psi_t(theta, x)` has a kink or jump. Quadrature
    /// splits the integration range at these points.
    fn breakpoints(&self, _t: usize, _theta: &[f64], _past: &[f64]) -> Vec<f64> {
        Vec::new()
    }
}

/// A predictable normalizing sequence `Gamma_t(theta)`.
///
/// The cumulative matrix is `finalize(t, initial + sum_{s<=t} increment_s)`.
/// `finalize` is the identity except for tuned sequences.
pub trait Normalizer: Send + Sync {
    fn dim(&self) -> usize;

    fn initial(&self) -> Matrix {
        Matrix::zeros(self.dim())
    }

    /// `Delta Gamma_t(theta)`; `past` holds observations before `X_t`.
    fn increment(&self, t: usize, theta: &[f64], past: &[f64]) -> Result<Matrix>;

    /// Increments do not depend on `theta`.
    fn theta_free(&self) -> bool {
        false
    }

    fn finalize(&self, _t: usize, accumulated: Matrix) -> Matrix {
        accumulated
    }

    /// `Gamma_t(theta)` re-evaluated from scratch. `past.len() + 1 - t` is the
    /// presample length.
    fn cumulative(&self, t: usize, theta: &[f64], past: &[f64]) -> Result<Matrix> {
        let offset = presample_len(t, past)?;
        let mut acc = self.initial();
        for s in 1..=t {
            acc += &self.increment(s, theta, &past[..offset + s - 1])?;
        }
        Ok(self.finalize(t, acc))
    }
}

pub(crate) fn presample_len(t: usize, past: &[f64]) -> Result<usize> {
    (past.len() + 1).checked_sub(t).ok_or(Error::DimensionMismatch {
        expected: t.saturating_sub(1),
        found: past.len(),
    })
}

macro_rules! forward_estimating_function {
    ($ptr:ty) => {
        impl<T: EstimatingFunction + ?Sized> EstimatingFunction for $ptr {
            fn dim(&self) -> usize {
                (**self).dim()
            }
            fn eval(&self, t: usize, theta: &[f64], x: f64, past: &[f64]) -> Vec<f64> {
                (**self).eval(t, theta, x, past)
            }
            fn is_martingale_difference(&self) -> bool {
                (**self).is_martingale_difference()
            }
            fn breakpoints(&self, t: usize, theta: &[f64], past: &[f64]) -> Vec<f64> {
                (**self).breakpoints(t, theta, past)
            }
        }
    };
}

macro_rules! forward_normalizer {
    ($ptr:ty) => {
        impl<T: Normalizer + ?Sized> Normalizer for $ptr {
            fn dim(&self) -> usize {
                (**self).dim()
            }
            fn initial(&self) -> Matrix {
                (**self).initial()
            }
            fn increment(&self, t: usize, theta: &[f64], past: &[f64]) -> Result<Matrix> {
                (**self).increment(t, theta, past)
            }
            fn theta_free(&self) -> bool {
                (**self).theta_free()
            }
            fn finalize(&self, t: usize, accumulated: Matrix) -> Matrix {
                (**self).finalize(t, accumulated)
            }
            fn cumulative(&self, t: usize, theta: &[f64], past: &[f64]) -> Result<Matrix> {
                (**self).cumulative(t, theta, past)
            }
        }
    };
}

forward_estimating_function!(Arc<T>);
forward_estimating_function!(Box<T>);
forward_estimating_function!(&T);
forward_normalizer!(Arc<T>);
forward_normalizer!(Box<T>);
forward_normalizer!(&T);

/// How `Gamma_t(theta_{t-1})` is formed for theta-dependent normalizers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaMode {
    /// Evaluate the whole cumulative sum at the current estimate.
    #[default]
    Reevaluate,
    /// Add `Delta Gamma_t(theta_{t-1})` to the running sum.
    Accumulate,
}

/// One trajectory point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub t: usize,
    pub theta: Vec<f64>,
    pub gamma: Matrix,
}

/// The output of a single run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub theta0: Vec<f64>,
    pub records: Vec<Record>,
}

impl Trajectory {
    pub fn new(theta0: Vec<f64>) -> Self {
        Self {
            theta0,
            records: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last_theta(&self) -> &[f64] {
        self.records
            .last()
            .map_or(self.theta0.as_slice(), |r| r.theta.as_slice())
    }

    /// Estimate at step `t` (`t = 0` is the starting point).
    pub fn theta_at(&self, t: usize) -> Option<&[f64]> {
        if t == 0 {
            return Some(&self.theta0);
        }
        self.records
            .get(t - 1)
            .filter(|r| r.t == t)
            .map(|r| r.theta.as_slice())
    }

    /// The `component`-th coordinate of every estimate.
    pub fn component(&self, component: usize) -> Vec<f64> {
        self.records.iter().map(|r| r.theta[component]).collect()
    }
}

/// Engine state after `t` steps.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorState {
    pub t: usize,
    pub theta: Vec<f64>,
    /// Effective `Gamma_t` used in the last step.
    pub gamma: Matrix,
    accumulated: Matrix,
}

impl EstimatorState {
    fn record(&self) -> Record {
        Record {
            t: self.t,
            theta: self.theta.clone(),
            gamma: self.gamma.clone(),
        }
    }
}

/// A recursive estimator assembled from an estimating function and a
/// normalizer.
pub struct Recursion<'a> {
    psi: &'a dyn EstimatingFunction,
    gamma: &'a dyn Normalizer,
    mode: GammaMode,
}

impl<'a> Recursion<'a> {
    pub fn new(psi: &'a dyn EstimatingFunction, gamma: &'a dyn Normalizer) -> Result<Self> {
        if psi.dim() != gamma.dim() || psi.dim() == 0 {
            return Err(Error::DimensionMismatch {
                expected: psi.dim(),
                found: gamma.dim(),
            });
        }
        Ok(Self {
            psi,
            gamma,
            mode: GammaMode::default(),
        })
    }

    pub fn with_mode(mut self, mode: GammaMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn dim(&self) -> usize {
        self.psi.dim()
    }

    pub fn start(&self, theta0: &[f64]) -> Result<EstimatorState> {
        self.check_theta(theta0)?;
        let initial = self.gamma.initial();
        Ok(EstimatorState {
            t: 0,
            theta: theta0.to_vec(),
            gamma: initial.clone(),
            accumulated: initial,
        })
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: theta.len(),
            });
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteUpdate);
        }
        Ok(())
    }

    /// `Gamma_t` at the current estimate, and the new running sum when the
    /// incremental path is used.
    fn current_gamma(
        &self,
        state: &EstimatorState,
        t: usize,
        past: &[f64],
    ) -> Result<(Matrix, Option<Matrix>)> {
        if self.gamma.theta_free() || self.mode == GammaMode::Accumulate {
            let mut acc = state.accumulated.clone();
            acc += &self.gamma.increment(t, &state.theta, past)?;
            Ok((self.gamma.finalize(t, acc.clone()), Some(acc)))
        } else {
            Ok((self.gamma.cumulative(t, &state.theta, past)?, None))
        }
    }

    /// Advances `state` by one observation. `past` must hold exactly the
    /// observations preceding `x` (presample included).
    pub fn step(&self, state: &mut EstimatorState, x: f64, past: &[f64]) -> Result<()> {
        let t = state.t + 1;
        // Gamma is formed before x is looked at.
        let (gamma, acc) = self.current_gamma(state, t, past)?;
        if !gamma.is_finite() {
            return Err(Error::NonFiniteUpdate);
        }
        let psi = self.psi.eval(t, &state.theta, x, past);
        if psi.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: psi.len(),
            });
        }
        if psi.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteUpdate);
        }
        let delta = solve_linear(&gamma, &psi)?;
        let theta: Vec<f64> = state.theta.iter().zip(&delta).map(|(a, d)| a + d).collect();
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteUpdate);
        }
        state.t = t;
        state.theta = theta;
        state.gamma = gamma;
        if let Some(acc) = acc {
            state.accumulated = acc;
        }
        Ok(())
    }

    pub fn run(&self, theta0: &[f64], series: &[f64]) -> Result<Trajectory> {
        self.run_with_presample(theta0, series, 0)
    }

    /// Runs over `series[presample..]`, with `series[..presample]` visible as
    /// history only.
    pub fn run_with_presample(
        &self,
        theta0: &[f64],
        series: &[f64],
        presample: usize,
    ) -> Result<Trajectory> {
        if series.len() <= presample {
            return Err(Error::EmptySeries);
        }
        let mut state = self.start(theta0)?;
        let mut trajectory = Trajectory::new(theta0.to_vec());
        trajectory.records.reserve(series.len() - presample);
        for i in presample..series.len() {
            self.step(&mut state, series[i], &series[..i])
                .map_err(|e| Error::StepFailed {
                    step: state.t + 1,
                    source: Box::new(e),
                })?;
            trajectory.records.push(state.record());
        }
        Ok(trajectory)
    }
}

/// Runs the recursion with the default (re-evaluating) normalizer mode.
pub fn run(
    psi: &dyn EstimatingFunction,
    gamma: &dyn Normalizer,
    theta0: &[f64],
    series: &[f64],
) -> Result<Trajectory> {
    Recursion::new(psi, gamma)?.run(theta0, series)
}

/// `theta*_t = theta + Gamma_t(theta)^{-1} sum_{s<=t} psi_s(theta)`.
///
/// Computed both in closed form and through the recursion
/// `D_t = D_{t-1} - Gamma_t^{-1} Delta Gamma_t D_{t-1} + Gamma_t^{-1} psi_t`;
/// the two must agree to `1e-8` relative or the call fails.
pub fn linear_statistic(
    theta_true: &[f64],
    psi: &dyn EstimatingFunction,
    gamma: &dyn Normalizer,
    series: &[f64],
    presample: usize,
) -> Result<Trajectory> {
    let (closed, recursive) = linear_statistic_forms(theta_true, psi, gamma, series, presample)?;
    let discrepancy = closed
        .records
        .iter()
        .zip(&recursive.records)
        .flat_map(|(a, b)| a.theta.iter().zip(&b.theta))
        .map(|(a, b)| (a - b).abs() / a.abs().max(1.0))
        .fold(0.0_f64, f64::max);
    if discrepancy > 1e-8 {
        return Err(Error::InconsistentLinearStatistic(discrepancy));
    }
    Ok(closed)
}

/// Closed form and recursive form of the linear statistic, unchecked.
pub fn linear_statistic_forms(
    theta_true: &[f64],
    psi: &dyn EstimatingFunction,
    gamma: &dyn Normalizer,
    series: &[f64],
    presample: usize,
) -> Result<(Trajectory, Trajectory)> {
    let m = psi.dim();
    if gamma.dim() != m || theta_true.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            found: theta_true.len(),
        });
    }
    if series.len() <= presample {
        return Err(Error::EmptySeries);
    }
    let mut closed = Trajectory::new(theta_true.to_vec());
    let mut recursive = Trajectory::new(theta_true.to_vec());
    let mut acc = gamma.initial();
    let mut sum = vec![0.0; m];
    let mut delta = vec![0.0; m];
    let mut previous: Option<Matrix> = None;

    for (k, i) in (presample..series.len()).enumerate() {
        let t = k + 1;
        let past = &series[..i];
        let wrap = |e: Error| Error::StepFailed {
            step: t,
            source: Box::new(e),
        };
        acc += &gamma.increment(t, theta_true, past).map_err(wrap)?;
        let gamma_t = gamma.finalize(t, acc.clone());
        let psi_t = psi.eval(t, theta_true, series[i], past);
        if psi_t.iter().any(|v| !v.is_finite()) {
            return Err(wrap(Error::NonFiniteUpdate));
        }
        for (s, p) in sum.iter_mut().zip(&psi_t) {
            *s += p;
        }

        let step = solve_linear(&gamma_t, &sum).map_err(wrap)?;
        closed.records.push(Record {
            t,
            theta: theta_true.iter().zip(&step).map(|(a, b)| a + b).collect(),
            gamma: gamma_t.clone(),
        });

        let mut rhs = psi_t;
        if let Some(prev) = &previous {
            let d_gamma = &gamma_t - prev;
            let shift = d_gamma.mul_vec(&delta);
            for (r, s) in rhs.iter_mut().zip(shift) {
                *r -= s;
            }
        }
        let correction = solve_linear(&gamma_t, &rhs).map_err(wrap)?;
        for (d, c) in delta.iter_mut().zip(correction) {
            *d += c;
        }
        recursive.records.push(Record {
            t,
            theta: theta_true.iter().zip(&delta).map(|(a, b)| a + b).collect(),
            gamma: gamma_t.clone(),
        });
        previous = Some(gamma_t);
    }
    Ok((closed, recursive))
}

/// An owning, push-driven estimator for streaming use.
pub struct OnlineEstimator {
    psi: Arc<dyn EstimatingFunction>,
    gamma: Arc<dyn Normalizer>,
    mode: GammaMode,
    presample: usize,
    history: Vec<f64>,
    state: EstimatorState,
}

impl OnlineEstimator {
    pub fn new(
        psi: Arc<dyn EstimatingFunction>,
        gamma: Arc<dyn Normalizer>,
        theta0: &[f64],
        presample: usize,
    ) -> Result<Self> {
        let state = Recursion::new(psi.as_ref(), gamma.as_ref())?.start(theta0)?;
        Ok(Self {
            psi,
            gamma,
            mode: GammaMode::default(),
            presample,
            history: Vec::new(),
            state,
        })
    }

    pub fn with_mode(mut self, mode: GammaMode) -> Self {
        self.mode = mode;
        self
    }

    /// Feeds one observation. Presample observations only extend the history.
    /// On error the estimator is left unchanged.
    pub fn push(&mut self, x: f64) -> Result<&[f64]> {
        if self.history.len() >= self.presample {
            let recursion =
                Recursion::new(self.psi.as_ref(), self.gamma.as_ref())?.with_mode(self.mode);
            let mut next = self.state.clone();
            recursion
                .step(&mut next, x, &self.history)
                .map_err(|e| Error::StepFailed {
                    step: next.t + 1,
                    source: Box::new(e),
                })?;
            self.state = next;
        }
        self.history.push(x);
        Ok(&self.state.theta)
    }

    pub fn theta(&self) -> &[f64] {
        &self.state.theta
    }

    pub fn gamma(&self) -> &Matrix {
        &self.state.gamma
    }

    pub fn steps(&self) -> usize {
        self.state.t
    }

    pub fn dim(&self) -> usize {
        self.psi.dim()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functions::{LocationResidual, StepNormalizer, ZeroFunction};

    fn mean_recursion() -> (LocationResidual, StepNormalizer) {
        (LocationResidual, StepNormalizer::unit(1))
    }

    #[test]
    fn first_step_is_the_observation() {
        let (psi, gamma) = mean_recursion();
        let rec = Recursion::new(&psi, &gamma).unwrap();
        let mut state = rec.start(&[0.0]).unwrap();
        rec.step(&mut state, 2.0, &[]).unwrap();
        assert_eq!(state.theta, vec![2.0]);
        rec.step(&mut state, 4.0, &[2.0]).unwrap();
        assert_eq!(state.theta, vec![3.0]);
    }

    #[test]
    fn running_mean_of_three() {
        let (psi, gamma) = mean_recursion();
        let traj = run(&psi, &gamma, &[-17.0], &[2.0, 4.0, 6.0]).unwrap();
        assert_eq!(traj.len(), 3);
        assert_eq!(traj.last_theta(), &[4.0]);
    }

    #[test]
    fn single_observation() {
        let (psi, gamma) = mean_recursion();
        assert_eq!(run(&psi, &gamma, &[0.0], &[1.5]).unwrap().len(), 1);
    }

    #[test]
    fn zero_function_keeps_estimate() {
        let psi = ZeroFunction::new(2);
        let gamma = StepNormalizer::unit(2);
        let traj = run(&psi, &gamma, &[0.3, -1.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!(traj.records.iter().all(|r| r.theta == vec![0.3, -1.0]));
    }

    #[test]
    fn empty_series_rejected() {
        let (psi, gamma) = mean_recursion();
        assert_eq!(run(&psi, &gamma, &[0.0], &[]), Err(Error::EmptySeries));
    }

    #[test]
    fn singular_start_reports_step() {
        let psi = LocationResidual;
        let gamma = StepNormalizer::new(Matrix::zeros(1), Matrix::zeros(1));
        match run(&psi, &gamma, &[0.0], &[1.0]) {
            Err(Error::StepFailed { step: 1, source }) => {
                assert!(matches!(*source, Error::SingularMatrix { .. }))
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_finite_psi_is_reported() {
        let (psi, gamma) = mean_recursion();
        let err = run(&psi, &gamma, &[0.0], &[1.0, f64::NAN]).unwrap_err();
        assert_eq!(err.root(), &Error::NonFiniteUpdate);
        assert!(matches!(err, Error::StepFailed { step: 2, .. }));
    }

    #[test]
    fn linear_statistic_is_sample_mean() {
        let (psi, gamma) = mean_recursion();
        let lin = linear_statistic(&[0.0], &psi, &gamma, &[1.0, 2.0, 6.0], 0).unwrap();
        assert_eq!(lin.component(0), vec![1.0, 1.5, 3.0]);
    }

    #[test]
    fn linear_statistic_of_zero_function() {
        let psi = ZeroFunction::new(1);
        let gamma = StepNormalizer::unit(1);
        let lin = linear_statistic(&[0.7], &psi, &gamma, &[1.0, 2.0], 0).unwrap();
        assert!(lin.records.iter().all(|r| r.theta == vec![0.7]));
    }

    #[test]
    fn online_matches_batch() {
        let (psi, gamma) = mean_recursion();
        let series = [0.5, -1.0, 3.0, 2.5];
        let batch = run(&psi, &gamma, &[0.0], &series).unwrap();
        let mut online =
            OnlineEstimator::new(Arc::new(psi), Arc::new(gamma), &[0.0], 0).unwrap();
        for x in series {
            online.push(x).unwrap();
        }
        assert_eq!(online.theta(), batch.last_theta());
        assert_eq!(online.steps(), 4);
    }

    #[test]
    fn online_error_leaves_state() {
        let (psi, gamma) = mean_recursion();
        let mut online =
            OnlineEstimator::new(Arc::new(psi), Arc::new(gamma), &[0.0], 0).unwrap();
        online.push(2.0).unwrap();
        assert!(online.push(f64::INFINITY).is_err());
        assert_eq!(online.theta(), &[2.0]);
        assert_eq!(online.push(4.0).unwrap(), &[3.0]);
    }
}
