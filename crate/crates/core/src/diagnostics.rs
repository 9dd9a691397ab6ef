//! Probes for local asymptotic linearity: scaled residuals against the linear
//! statistic, conditional drift and `R_t` fields, the `A_t Gamma_t^{-1} A_t`
//! sequence, and Monte Carlo normality reports.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::engine::{presample_len, EstimatingFunction, Normalizer, Trajectory};
use crate::error::{Error, Result};
use crate::linalg::{solve_linear, Matrix};
use crate::models::{CaefFamily, ConditionalModel, IidModel};
use crate::normalizers::conditional_drift_at;
use crate::quadrature::normal_cdf;

/// Minimum number of samples for `normality_check`.
pub const MIN_NORMALITY_SAMPLES: usize = 100;

/// Scaling matrices `A_t`.
#[derive(Clone)]
pub enum ScalingSequence {
    /// `sqrt(t) I`.
    SqrtT { dim: usize },
    /// `sqrt(H_0 + sum_{s<=t} h(X_{s-1}))` for a scalar Markov family.
    HSqrt {
        family: Arc<dyn CaefFamily>,
        h0: f64,
    },
}

impl std::fmt::Debug for ScalingSequence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

impl ScalingSequence {
    pub fn sqrt_t(dim: usize) -> Self {
        ScalingSequence::SqrtT { dim }
    }

    pub fn h_sqrt(family: Arc<dyn CaefFamily>, h0: f64) -> Self {
        ScalingSequence::HSqrt { family, h0 }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            ScalingSequence::SqrtT { .. } => "sqrt_t_identity",
            ScalingSequence::HSqrt { .. } => "h_sqrt",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ScalingSequence::SqrtT { dim } => *dim,
            ScalingSequence::HSqrt { .. } => 1,
        }
    }

    /// `A_t`; `past` holds the observations before `X_t`.
    pub fn matrix(&self, t: usize, past: &[f64]) -> Result<Matrix> {
        match self {
            ScalingSequence::SqrtT { dim } => Ok(Matrix::scaled_identity(*dim, (t as f64).sqrt())),
            ScalingSequence::HSqrt { family, h0 } => {
                let offset = presample_len(t, past)?;
                if offset == 0 {
                    return Err(Error::PreconditionViolated(
                        "H_t scaling needs X_0 as presample".into(),
                    ));
                }
                let h: f64 = past[offset - 1..].iter().map(|x| family.h(*x)).sum();
                Ok(Matrix::scalar((h0 + h).sqrt()))
            }
        }
    }
}

/// `r_t = A_t (theta_t - theta*_t)` on a shared time grid.
pub fn linearity_residual(
    traj: &Trajectory,
    linear: &Trajectory,
    scaling: &ScalingSequence,
    series: &[f64],
    presample: usize,
) -> Result<Vec<Vec<f64>>> {
    if traj.len() != linear.len()
        || traj.records.iter().zip(&linear.records).any(|(a, b)| a.t != b.t)
    {
        return Err(Error::GridMismatch);
    }
    traj.records
        .iter()
        .zip(&linear.records)
        .map(|(a, b)| {
            let i = presample + a.t - 1;
            if i >= series.len() {
                return Err(Error::GridMismatch);
            }
            let diff: Vec<f64> = a.theta.iter().zip(&b.theta).map(|(x, y)| x - y).collect();
            Ok(scaling.matrix(a.t, &series[..i])?.mul_vec(&diff))
        })
        .collect()
}

/// `b_t(theta, u) = E_theta{psi_t(theta + u) | past}`.
pub fn conditional_drift(
    model: &dyn ConditionalModel,
    psi: &dyn EstimatingFunction,
    t: usize,
    theta: &[f64],
    u: &[f64],
    past: &[f64],
) -> Result<Vec<f64>> {
    if psi.dim() != model.dim() || theta.len() != psi.dim() || u.len() != psi.dim() {
        return Err(Error::DimensionMismatch {
            expected: psi.dim(),
            found: u.len(),
        });
    }
    conditional_drift_at(model, psi, t, theta, u, past)
}

/// `R_t(theta, u) = Gamma_t(theta) Gamma_t(theta + u)^{-1} b_t(theta, u)`.
pub fn r_field(
    model: &dyn ConditionalModel,
    psi: &dyn EstimatingFunction,
    gamma: &dyn Normalizer,
    t: usize,
    theta: &[f64],
    u: &[f64],
    past: &[f64],
) -> Result<Vec<f64>> {
    let b = conditional_drift(model, psi, t, theta, u, past)?;
    if gamma.theta_free() {
        return Ok(b);
    }
    let shifted: Vec<f64> = theta.iter().zip(u).map(|(a, b)| a + b).collect();
    let at_shift = gamma.cumulative(t, &shifted, past)?;
    let at_theta = gamma.cumulative(t, theta, past)?;
    Ok(at_theta.mul_vec(&solve_linear(&at_shift, &b)?))
}

/// `E_theta{psi_s(theta_{s-1}) | F_{s-1}}` along a recursive trajectory.
pub fn path_drift(
    model: &dyn ConditionalModel,
    psi: &dyn EstimatingFunction,
    theta: &[f64],
    traj: &Trajectory,
    series: &[f64],
    presample: usize,
) -> Result<Vec<Vec<f64>>> {
    let mut previous = traj.theta0.clone();
    let mut out = Vec::with_capacity(traj.len());
    for r in &traj.records {
        let i = presample + r.t - 1;
        if i >= series.len() {
            return Err(Error::GridMismatch);
        }
        let u: Vec<f64> = previous.iter().zip(theta).map(|(a, b)| a - b).collect();
        out.push(conditional_drift(model, psi, r.t, theta, &u, &series[..i])?);
        previous = r.theta.clone();
    }
    Ok(out)
}

/// The sequence `A_t Gamma_t(theta)^{-1} A_t` and its last-quarter spread.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionEProbe {
    pub matrices: Vec<Matrix>,
    /// Largest entrywise `max - min` over the last quarter of the sequence.
    pub tail_deviation: f64,
}

impl ConditionEProbe {
    pub fn last(&self) -> Option<&Matrix> {
        self.matrices.last()
    }
}

pub fn condition_e_probe(
    gamma: &dyn Normalizer,
    scaling: &ScalingSequence,
    theta: &[f64],
    series: &[f64],
    presample: usize,
) -> Result<ConditionEProbe> {
    let m = gamma.dim();
    if scaling.dim() != m || theta.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            found: scaling.dim(),
        });
    }
    if series.len() <= presample {
        return Err(Error::EmptySeries);
    }
    let mut acc = gamma.initial();
    let mut matrices = Vec::with_capacity(series.len() - presample);
    for (k, i) in (presample..series.len()).enumerate() {
        let t = k + 1;
        let past = &series[..i];
        let wrap = |e: Error| Error::StepFailed {
            step: t,
            source: Box::new(e),
        };
        acc += &gamma.increment(t, theta, past).map_err(wrap)?;
        let g = gamma.finalize(t, acc.clone());
        let a = scaling.matrix(t, past).map_err(wrap)?;
        let mut inv = Matrix::zeros(m);
        for j in 0..m {
            let mut e = vec![0.0; m];
            e[j] = 1.0;
            let col = solve_linear(&g, &e).map_err(wrap)?;
            for (r, v) in col.into_iter().enumerate() {
                inv[(r, j)] = v;
            }
        }
        matrices.push(a.mul(&inv).mul(&a));
    }
    let tail = &matrices[matrices.len() - matrices.len().div_ceil(4)..];
    let mut tail_deviation = 0.0_f64;
    for r in 0..m {
        for c in 0..m {
            let (lo, hi) = tail.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
                (lo.min(x[(r, c)]), hi.max(x[(r, c)]))
            });
            tail_deviation = tail_deviation.max(hi - lo);
        }
    }
    Ok(ConditionEProbe {
        matrices,
        tail_deviation,
    })
}

/// `j_psi(theta) = int psi psi^T f`.
pub fn j_psi(model: &dyn IidModel, psi: &dyn EstimatingFunction, theta: &[f64]) -> Result<Matrix> {
    let m = psi.dim();
    let f = |x: f64| {
        let p = psi.eval(1, theta, x, &[]);
        let mut out = Vec::with_capacity(m * m);
        for a in &p {
            for b in &p {
                out.push(a * b);
            }
        }
        out
    };
    let breakpoints = psi.breakpoints(1, theta, &[]);
    Matrix::from_row_major(m, model.expectation(theta, &[], &f, m * m, &breakpoints)?)
}

/// One-sample Kolmogorov–Smirnov statistic `sup |F_n - F|`.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut x = samples.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    x.iter().enumerate().fold(0.0_f64, |d, (i, v)| {
        let f = cdf(*v);
        d.max(f - i as f64 / n).max((i + 1) as f64 / n - f)
    })
}

/// Asymptotic 1% critical value `1.63 / sqrt(n)`.
pub fn ks_critical_1pct(n: usize) -> f64 {
    1.63 / (n as f64).sqrt()
}

/// Summary of scaled estimation errors against a target normal law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalityReport {
    pub n_samples: usize,
    pub sample_mean: Vec<f64>,
    pub sample_cov: Vec<Vec<f64>>,
    pub target_cov: Vec<Vec<f64>>,
    /// Per component, against `N(0, target_cov[i][i])`.
    pub ks_statistic: Vec<f64>,
    pub ks_critical_1pct: f64,
    pub failed_replications: usize,
}

impl NormalityReport {
    pub fn ks_passes(&self) -> bool {
        self.ks_statistic.iter().all(|k| *k < self.ks_critical_1pct)
    }
}

/// Empirical mean, covariance (divisor `n - 1`) and marginal KS statistics.
pub fn normality_check(samples: &[Vec<f64>], target_cov: &Matrix) -> Result<NormalityReport> {
    let n = samples.len();
    if n < MIN_NORMALITY_SAMPLES {
        return Err(Error::InsufficientSamples {
            found: n,
            required: MIN_NORMALITY_SAMPLES,
        });
    }
    let m = target_cov.dim();
    if let Some(bad) = samples.iter().find(|s| s.len() != m) {
        return Err(Error::DimensionMismatch {
            expected: m,
            found: bad.len(),
        });
    }
    let mut mean = vec![0.0; m];
    for s in samples {
        for (a, v) in mean.iter_mut().zip(s) {
            *a += v;
        }
    }
    for a in mean.iter_mut() {
        *a /= n as f64;
    }
    let mut cov = vec![vec![0.0; m]; m];
    for s in samples {
        for i in 0..m {
            for j in 0..m {
                cov[i][j] += (s[i] - mean[i]) * (s[j] - mean[j]);
            }
        }
    }
    for row in cov.iter_mut() {
        for v in row.iter_mut() {
            *v /= (n - 1) as f64;
        }
    }
    let ks = (0..m)
        .map(|i| {
            let sd = target_cov[(i, i)].sqrt();
            let column: Vec<f64> = samples.iter().map(|s| s[i]).collect();
            ks_statistic(&column, |x| {
                if sd > 0.0 {
                    normal_cdf(x / sd)
                } else if x >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            })
        })
        .collect();
    Ok(NormalityReport {
        n_samples: n,
        sample_mean: mean,
        sample_cov: cov,
        target_cov: target_cov.rows(),
        ks_statistic: ks,
        ks_critical_1pct: ks_critical_1pct(n),
        failed_replications: 0,
    })
}
