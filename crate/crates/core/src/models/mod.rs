//! Model families: conditional densities with scores, Fisher increments and
//! samplers, plus the recursions specific to each family.

mod ar;
mod caef;
mod iid;
mod linear;

use std::sync::Arc;

pub use ar::{
    ar_likelihood_run, ar_simulate, ArFisherNormalizer, ArModel, ArScore, Innovation,
    DEFAULT_RIDGE,
};
pub use caef::{
    caef_drift, caef_run, galton_watson_poisson, CaefFamily, CaefModel, CaefNormalizer, CaefRun,
    CaefScore, CaefState, GaltonWatsonPoisson,
};
pub use iid::{normal_location_model, NormalLocation};
pub use linear::{
    linear_closed_form, linear_run, AffineEstimatingFunction, LinearProcedureSpec,
    PredictableNormalizer,
};

use crate::engine::EstimatingFunction;
use crate::error::Result;
use crate::linalg::Matrix;
use crate::rng::SimRng;

/// A conditional density `f_t(theta, x | past)` with score and Fisher
/// increment.
pub trait ConditionalModel: Send + Sync {
    fn dim(&self) -> usize;

    /// Observations needed as history before the first estimation step.
    fn presample(&self) -> usize {
        0
    }

    /// Density (or mass) of `X_t = x`.
    fn density(&self, theta: &[f64], x: f64, past: &[f64]) -> f64;

    /// `l_t(theta) = grad_theta log f_t(theta, x | past)`.
    fn score(&self, theta: &[f64], x: f64, past: &[f64]) -> Vec<f64>;

    /// `i_t(theta) = E{l_t l_t^T | past}`.
    fn fisher_increment(&self, theta: &[f64], past: &[f64]) -> Result<Matrix>;

    fn fisher_theta_free(&self) -> bool {
        false
    }

    /// Observations are independent and identically distributed.
    fn is_iid(&self) -> bool {
        false
    }

    /// `E_theta{ f(X_t) | past }`; `breakpoints` are points where `f` is not
    /// smooth.
    fn expectation(
        &self,
        theta: &[f64],
        past: &[f64],
        f: &dyn Fn(f64) -> Vec<f64>,
        dim: usize,
        breakpoints: &[f64],
    ) -> Result<Vec<f64>>;

    /// Total mass of the conditional density over the truncated support.
    fn total_mass(&self, theta: &[f64], past: &[f64]) -> Result<f64>;
}

/// An i.i.d. model with a sampler.
pub trait IidModel: ConditionalModel {
    fn fisher(&self, theta: &[f64]) -> Matrix;

    fn sample(&self, theta: &[f64], rng: &mut SimRng) -> f64;
}

impl<T: ConditionalModel + ?Sized> ConditionalModel for Arc<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn presample(&self) -> usize {
        (**self).presample()
    }
    fn density(&self, theta: &[f64], x: f64, past: &[f64]) -> f64 {
        (**self).density(theta, x, past)
    }
    fn score(&self, theta: &[f64], x: f64, past: &[f64]) -> Vec<f64> {
        (**self).score(theta, x, past)
    }
    fn fisher_increment(&self, theta: &[f64], past: &[f64]) -> Result<Matrix> {
        (**self).fisher_increment(theta, past)
    }
    fn fisher_theta_free(&self) -> bool {
        (**self).fisher_theta_free()
    }
    fn is_iid(&self) -> bool {
        (**self).is_iid()
    }
    fn expectation(
        &self,
        theta: &[f64],
        past: &[f64],
        f: &dyn Fn(f64) -> Vec<f64>,
        dim: usize,
        breakpoints: &[f64],
    ) -> Result<Vec<f64>> {
        (**self).expectation(theta, past, f, dim, breakpoints)
    }
    fn total_mass(&self, theta: &[f64], past: &[f64]) -> Result<f64> {
        (**self).total_mass(theta, past)
    }
}

/// The likelihood estimating function `psi_t = l_t`.
#[derive(Clone)]
pub struct ScoreFunction {
    model: Arc<dyn ConditionalModel>,
}

impl ScoreFunction {
    pub fn new(model: Arc<dyn ConditionalModel>) -> Self {
        Self { model }
    }
}

impl EstimatingFunction for ScoreFunction {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn eval(&self, _t: usize, theta: &[f64], x: f64, past: &[f64]) -> Vec<f64> {
        self.model.score(theta, x, past)
    }

    fn is_martingale_difference(&self) -> bool {
        true
    }
}

/// The `m` most recent observations, newest first: `(X_{t-1}, ..., X_{t-m})`.
pub(crate) fn regressor_window(past: &[f64], order: usize) -> Vec<f64> {
    assert!(
        past.len() >= order,
        "need {order} past observations, have {}",
        past.len()
    );
    past.iter().rev().take(order).copied().collect()
}
