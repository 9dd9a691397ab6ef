use rand_distr::{Distribution, StandardNormal};

use super::{ConditionalModel, IidModel};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::quadrature::{normal_pdf, QuadratureSettings};
use crate::rng::SimRng;

/// i.i.d. `N(theta, sigma^2)` with unknown location `theta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalLocation {
    sigma: f64,
    quadrature: QuadratureSettings,
}

pub fn normal_location_model(sigma: f64) -> Result<NormalLocation> {
    NormalLocation::new(sigma)
}

impl NormalLocation {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::PreconditionViolated(format!(
                "normal location needs sigma > 0, got {sigma}"
            )));
        }
        Ok(Self {
            sigma,
            quadrature: QuadratureSettings::default(),
        })
    }

    pub fn with_quadrature(mut self, quadrature: QuadratureSettings) -> Self {
        self.quadrature = quadrature;
        self
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

impl ConditionalModel for NormalLocation {
    fn dim(&self) -> usize {
        1
    }

    fn density(&self, theta: &[f64], x: f64, _past: &[f64]) -> f64 {
        normal_pdf(x, theta[0], self.sigma)
    }

    fn score(&self, theta: &[f64], x: f64, _past: &[f64]) -> Vec<f64> {
        vec![(x - theta[0]) / (self.sigma * self.sigma)]
    }

    fn fisher_increment(&self, theta: &[f64], _past: &[f64]) -> Result<Matrix> {
        Ok(self.fisher(theta))
    }

    fn fisher_theta_free(&self) -> bool {
        true
    }

    fn is_iid(&self) -> bool {
        true
    }

    fn expectation(
        &self,
        theta: &[f64],
        _past: &[f64],
        f: &dyn Fn(f64) -> Vec<f64>,
        dim: usize,
        breakpoints: &[f64],
    ) -> Result<Vec<f64>> {
        self.quadrature
            .normal_expectation(f, dim, theta[0], self.sigma, breakpoints)
    }

    fn total_mass(&self, theta: &[f64], past: &[f64]) -> Result<f64> {
        let density = |x: f64| self.density(theta, x, past);
        let one = |_: f64| vec![1.0];
        Ok(self
            .quadrature
            .density_expectation(&one, 1, &density, theta[0], self.sigma, &[])?[0])
    }
}

impl IidModel for NormalLocation {
    fn fisher(&self, _theta: &[f64]) -> Matrix {
        Matrix::scalar(1.0 / (self.sigma * self.sigma))
    }

    fn sample(&self, theta: &[f64], rng: &mut SimRng) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        theta[0] + self.sigma * z
    }
}
