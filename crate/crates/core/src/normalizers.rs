//! Normalizer constructors: conditional Fisher information, the negative drift
//! derivative `-b'_t(theta, 0)`, the score covariance `E{psi_t l_t^T}`, and
//! tuned sequences `C + c_t Gamma_t`.

use std::sync::Arc;

use crate::engine::{presample_len, EstimatingFunction, Normalizer};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::models::ConditionalModel;

/// Default relative finite-difference step.
pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// `Delta Gamma_t = i_t(theta)`.
#[derive(Clone)]
pub struct FisherNormalizer {
    model: Arc<dyn ConditionalModel>,
    initial: Matrix,
}

pub fn fisher_normalizer(model: Arc<dyn ConditionalModel>) -> FisherNormalizer {
    let initial = Matrix::zeros(model.dim());
    FisherNormalizer { model, initial }
}

impl FisherNormalizer {
    pub fn with_initial(mut self, initial: Matrix) -> Self {
        self.initial = initial;
        self
    }
}

impl Normalizer for FisherNormalizer {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn initial(&self) -> Matrix {
        self.initial.clone()
    }

    fn increment(&self, _t: usize, theta: &[f64], past: &[f64]) -> Result<Matrix> {
        self.model.fisher_increment(theta, past)
    }

    fn theta_free(&self) -> bool {
        self.model.fisher_theta_free()
    }

    fn cumulative(&self, t: usize, theta: &[f64], past: &[f64]) -> Result<Matrix> {
        let offset = presample_len(t, past)?;
        let mut acc = self.initial.clone();
        if self.model.is_iid() {
            acc += &self.model.fisher_increment(theta, &past[..offset])?.scale(t as f64);
        } else {
            for s in 1..=t {
                acc += &self.model.fisher_increment(theta, &past[..offset + s - 1])?;
            }
        }
        Ok(acc)
    }
}

type DerivativeFn = dyn Fn(usize, &[f64], &[f64]) -> Matrix + Send + Sync;

/// `Delta Gamma_t = -d/du b_t(theta, u)` at `u = 0`, where
/// `b_t(theta, u) = E_theta{psi_t(theta + u) | past}`.
#[derive(Clone)]
pub struct BprimeNormalizer {
    psi: Arc<dyn EstimatingFunction>,
    model: Arc<dyn ConditionalModel>,
    fd_step: f64,
    derivative: Option<Arc<DerivativeFn>>,
    initial: Matrix,
}

pub fn bprime_normalizer(
    psi: Arc<dyn EstimatingFunction>,
    model: Arc<dyn ConditionalModel>,
    fd_step: f64,
) -> Result<BprimeNormalizer> {
    if !(fd_step > 0.0 && fd_step.is_finite()) {
        return Err(Error::PreconditionViolated(format!(
            "fd_step must be positive, got {fd_step}"
        )));
    }
    check_dims(psi.as_ref(), model.as_ref())?;
    let initial = Matrix::zeros(psi.dim());
    Ok(BprimeNormalizer {
        psi,
        model,
        fd_step,
        derivative: None,
        initial,
    })
}

impl BprimeNormalizer {
    /// Use `-d/du b_t(theta, u)|_{u=0}` from `derivative(t, theta, past)`
    /// instead of finite differences.
    pub fn with_derivative(
        mut self,
        derivative: impl Fn(usize, &[f64], &[f64]) -> Matrix + Send + Sync + 'static,
    ) -> Self {
        self.derivative = Some(Arc::new(derivative));
        self
    }

    pub fn with_initial(mut self, initial: Matrix) -> Self {
        self.initial = initial;
        self
    }

    pub fn fd_step(&self) -> f64 {
        self.fd_step
    }

    fn drift(&self, t: usize, theta: &[f64], u: &[f64], past: &[f64]) -> Result<Vec<f64>> {
        conditional_drift_at(self.model.as_ref(), self.psi.as_ref(), t, theta, u, past)
    }
}

impl Normalizer for BprimeNormalizer {
    fn dim(&self) -> usize {
        self.psi.dim()
    }

    fn initial(&self) -> Matrix {
        self.initial.clone()
    }

    fn increment(&self, t: usize, theta: &[f64], past: &[f64]) -> Result<Matrix> {
        if let Some(d) = &self.derivative {
            return Ok(d(t, theta, past));
        }
        let m = self.dim();
        let mut out = Matrix::zeros(m);
        let mut u = vec![0.0; m];
        for j in 0..m {
            let h = self.fd_step * (1.0 + theta[j].abs());
            u[j] = h;
            let plus = self.drift(t, theta, &u, past)?;
            u[j] = -h;
            let minus = self.drift(t, theta, &u, past)?;
            u[j] = 0.0;
            for i in 0..m {
                out[(i, j)] = -(plus[i] - minus[i]) / (2.0 * h);
            }
        }
        Ok(out)
    }
}

/// `Delta Gamma_t = E_theta{psi_t(theta) l_t(theta)^T | past}`.
#[derive(Clone)]
pub struct ScoreCovarianceNormalizer {
    psi: Arc<dyn EstimatingFunction>,
    model: Arc<dyn ConditionalModel>,
    initial: Matrix,
}

pub fn score_covariance_normalizer(
    psi: Arc<dyn EstimatingFunction>,
    model: Arc<dyn ConditionalModel>,
) -> Result<ScoreCovarianceNormalizer> {
    check_dims(psi.as_ref(), model.as_ref())?;
    let initial = Matrix::zeros(psi.dim());
    Ok(ScoreCovarianceNormalizer {
        psi,
        model,
        initial,
    })
}

impl ScoreCovarianceNormalizer {
    pub fn with_initial(mut self, initial: Matrix) -> Self {
        self.initial = initial;
        self
    }
}

impl Normalizer for ScoreCovarianceNormalizer {
    fn dim(&self) -> usize {
        self.psi.dim()
    }

    fn initial(&self) -> Matrix {
        self.initial.clone()
    }

    fn increment(&self, t: usize, theta: &[f64], past: &[f64]) -> Result<Matrix> {
        let m = self.dim();
        let f = |x: f64| {
            let p = self.psi.eval(t, theta, x, past);
            let l = self.model.score(theta, x, past);
            let mut out = Vec::with_capacity(m * m);
            for pi in &p {
                for lj in &l {
                    out.push(pi * lj);
                }
            }
            out
        };
        let breakpoints = self.psi.breakpoints(t, theta, past);
        let flat = self.model.expectation(theta, past, &f, m * m, &breakpoints)?;
        Matrix::from_row_major(m, flat)
    }
}

/// `C + c_t Gamma_t`, with `c_t` taken from `schedule` for
/// `t <= schedule.len()` and equal to one afterwards.
#[derive(Clone)]
pub struct TunedNormalizer {
    base: Arc<dyn Normalizer>,
    offset: Matrix,
    schedule: Vec<f64>,
}

pub fn tuned(base: Arc<dyn Normalizer>, c: Matrix, schedule: Vec<f64>) -> Result<TunedNormalizer> {
    if c.dim() != base.dim() {
        return Err(Error::DimensionMismatch {
            expected: base.dim(),
            found: c.dim(),
        });
    }
    if let Some(bad) = schedule.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
        return Err(Error::PreconditionViolated(format!(
            "tuning factors must be finite and >= 0, got {bad}"
        )));
    }
    Ok(TunedNormalizer {
        base,
        offset: c,
        schedule,
    })
}

impl TunedNormalizer {
    pub fn factor(&self, t: usize) -> f64 {
        t.checked_sub(1)
            .and_then(|i| self.schedule.get(i))
            .copied()
            .unwrap_or(1.0)
    }

    fn apply(&self, t: usize, gamma: Matrix) -> Matrix {
        &self.offset + &gamma.scale(self.factor(t))
    }
}

impl Normalizer for TunedNormalizer {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn initial(&self) -> Matrix {
        self.base.initial()
    }

    fn increment(&self, t: usize, theta: &[f64], past: &[f64]) -> Result<Matrix> {
        self.base.increment(t, theta, past)
    }

    fn theta_free(&self) -> bool {
        self.base.theta_free()
    }

    fn finalize(&self, t: usize, accumulated: Matrix) -> Matrix {
        self.apply(t, self.base.finalize(t, accumulated))
    }

    fn cumulative(&self, t: usize, theta: &[f64], past: &[f64]) -> Result<Matrix> {
        Ok(self.apply(t, self.base.cumulative(t, theta, past)?))
    }
}

fn check_dims(psi: &dyn EstimatingFunction, model: &dyn ConditionalModel) -> Result<()> {
    if psi.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: psi.dim(),
        });
    }
    Ok(())
}

/// `E_theta{psi_t(theta + u) | past}` by quadrature.
pub(crate) fn conditional_drift_at(
    model: &dyn ConditionalModel,
    psi: &dyn EstimatingFunction,
    t: usize,
    theta: &[f64],
    u: &[f64],
    past: &[f64],
) -> Result<Vec<f64>> {
    let shifted: Vec<f64> = theta.iter().zip(u).map(|(a, b)| a + b).collect();
    let f = |x: f64| psi.eval(t, &shifted, x, past);
    let breakpoints = psi.breakpoints(t, &shifted, past);
    model.expectation(theta, past, &f, psi.dim(), &breakpoints)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::Recursion;
    use crate::functions::{LocationResidual, StepNormalizer};
    use crate::models::{normal_location_model, ArModel, Innovation, ScoreFunction};
    use crate::quadrature::normal_cdf;
    use crate::robust::{PsiFunction, RobustLocation};

    fn normal(sigma: f64) -> Arc<dyn ConditionalModel> {
        Arc::new(normal_location_model(sigma).unwrap())
    }

    #[test]
    fn fisher_normal_location_is_t_over_sigma_squared() {
        for (sigma, per_step) in [(1.0, 1.0), (2.0, 0.25)] {
            let g = fisher_normalizer(normal(sigma));
            let past = [0.3; 9];
            let gamma = g.cumulative(10, &[0.1], &past).unwrap();
            assert!((gamma[(0, 0)] - 10.0 * per_step).abs() < 1e-12);
            assert!(g.theta_free());
        }
    }

    #[test]
    fn fisher_ar_increment_is_psd() {
        let model = ArModel::new(vec![0.2, 0.1], Innovation::Gaussian { sigma: 1.5 }).unwrap();
        let g = fisher_normalizer(Arc::new(model));
        let inc = g.increment(1, &[0.0, 0.0], &[0.4, -1.3]).unwrap();
        assert!(inc.is_symmetric(0.0));
        assert!(inc.min_symmetric_eigenvalue() >= -1e-8);
    }

    #[test]
    fn bprime_of_residual_is_one() {
        let g = bprime_normalizer(Arc::new(LocationResidual), normal(1.0), DEFAULT_FD_STEP).unwrap();
        let inc = g.increment(1, &[0.4], &[]).unwrap();
        assert!((inc[(0, 0)] - 1.0).abs() < 1e-8, "{}", inc[(0, 0)]);
    }

    #[test]
    fn bprime_of_huber_residual_is_cg() {
        let psi = Arc::new(RobustLocation::new(PsiFunction::huber(1.8).unwrap(), 1.0).unwrap());
        let expected = 2.0 * normal_cdf(1.8) - 1.0;
        let coarse = bprime_normalizer(psi.clone(), normal(1.0), 1e-5).unwrap();
        let fine = bprime_normalizer(psi, normal(1.0), 1e-6).unwrap();
        let a = coarse.increment(1, &[0.0], &[]).unwrap()[(0, 0)];
        let b = fine.increment(1, &[0.0], &[]).unwrap()[(0, 0)];
        assert!((a - expected).abs() < 1e-6, "{a} vs {expected}");
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }

    #[test]
    fn bprime_analytic_override() {
        let g = bprime_normalizer(Arc::new(LocationResidual), normal(1.0), DEFAULT_FD_STEP)
            .unwrap()
            .with_derivative(|_, _, _| Matrix::scalar(7.0));
        assert_eq!(g.increment(3, &[0.0], &[1.0, 2.0]).unwrap()[(0, 0)], 7.0);
    }

    #[test]
    fn bprime_rejects_bad_step() {
        assert!(bprime_normalizer(Arc::new(LocationResidual), normal(1.0), 0.0).is_err());
    }

    #[test]
    fn score_covariance_matches_fisher_for_score() {
        for sigma in [1.0, 3.0] {
            let model = normal(sigma);
            let sc = score_covariance_normalizer(Arc::new(ScoreFunction::new(model.clone())), model.clone())
                .unwrap();
            let fi = fisher_normalizer(model);
            let a = sc.increment(1, &[0.2], &[]).unwrap()[(0, 0)];
            let b = fi.increment(1, &[0.2], &[]).unwrap()[(0, 0)];
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn score_covariance_of_residual_is_one() {
        let sc = score_covariance_normalizer(Arc::new(LocationResidual), normal(2.0)).unwrap();
        assert!((sc.increment(1, &[0.0], &[]).unwrap()[(0, 0)] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn score_covariance_of_huber_is_positive() {
        let psi = Arc::new(RobustLocation::new(PsiFunction::huber(1.0).unwrap(), 1.0).unwrap());
        let sc = score_covariance_normalizer(psi, normal(1.0)).unwrap();
        assert!(sc.increment(1, &[0.0], &[]).unwrap()[(0, 0)] > 0.0);
    }

    #[test]
    fn tuned_identity_and_offsets() {
        let base: Arc<dyn Normalizer> = Arc::new(StepNormalizer::unit(1));
        let plain = tuned(base.clone(), Matrix::zeros(1), vec![]).unwrap();
        let past = [0.0; 6];
        assert_eq!(
            plain.cumulative(7, &[0.0], &past).unwrap(),
            base.cumulative(7, &[0.0], &past).unwrap()
        );
        let shifted = tuned(base.clone(), Matrix::scalar(5.0), vec![]).unwrap();
        assert_eq!(shifted.cumulative(7, &[0.0], &past).unwrap()[(0, 0)], 12.0);
        let delayed = tuned(base, Matrix::scalar(2.0), vec![0.0; 10]).unwrap();
        assert_eq!(delayed.cumulative(7, &[0.0], &past).unwrap()[(0, 0)], 2.0);
        assert_eq!(delayed.cumulative(11, &[0.0], &[0.0; 10]).unwrap()[(0, 0)], 13.0);
    }

    #[test]
    fn tuned_rejects_negative_factor() {
        assert!(tuned(Arc::new(StepNormalizer::unit(1)), Matrix::zeros(1), vec![-1.0]).is_err());
    }

    #[test]
    fn tuned_trajectory_is_bit_identical() {
        let base: Arc<dyn Normalizer> = Arc::new(fisher_normalizer(normal(1.0)));
        let wrapped = tuned(base.clone(), Matrix::zeros(1), vec![1.0; 3]).unwrap();
        let psi = ScoreFunction::new(normal(1.0));
        let series = [0.3, -1.2, 2.2, 0.9, 0.1];
        let a = Recursion::new(&psi, base.as_ref()).unwrap().run(&[0.0], &series).unwrap();
        let b = Recursion::new(&psi, &wrapped).unwrap().run(&[0.0], &series).unwrap();
        assert_eq!(a, b);
    }
}
