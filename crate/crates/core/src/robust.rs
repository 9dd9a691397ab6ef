//! Huber and Hampel functions, MAD scale, the constants `C_g`, and the
//! GM recursions for robust AR(1) estimation.

use serde::{Deserialize, Serialize};

use crate::engine::{EstimatingFunction, Normalizer, Record, Trajectory};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, SINGULARITY_THRESHOLD};
use crate::quadrature::{adaptive_simpson, normal_cdf, normal_pdf};

/// Consistency constant of the MAD for the normal distribution.
pub const MAD_CONSTANT: f64 = 0.6745;

/// Tolerance for the `C_g` integrals.
pub const C_G_TOL: f64 = 1e-12;

pub fn huber(x: f64, c: f64) -> f64 {
    x.clamp(-c, c)
}

pub fn hampel(x: f64, alpha: f64, beta: f64) -> f64 {
    let a = x.abs();
    let v = if a <= alpha {
        a
    } else if a <= beta {
        alpha * (beta - a) / (beta - alpha)
    } else {
        0.0
    };
    v.copysign(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "psi", rename_all = "snake_case", deny_unknown_fields)]
pub enum PsiFunction {
    Huber { c: f64 },
    Hampel { alpha: f64, beta: f64 },
}

impl PsiFunction {
    pub fn huber(c: f64) -> Result<Self> {
        let f = PsiFunction::Huber { c };
        f.validate()?;
        Ok(f)
    }

    pub fn hampel(alpha: f64, beta: f64) -> Result<Self> {
        let f = PsiFunction::Hampel { alpha, beta };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            PsiFunction::Huber { c } if c > 0.0 && c.is_finite() => Ok(()),
            PsiFunction::Huber { c } => Err(Error::PreconditionViolated(format!(
                "huber needs c > 0, got {c}"
            ))),
            PsiFunction::Hampel { alpha, beta }
                if alpha > 0.0 && alpha < beta && beta.is_finite() =>
            {
                Ok(())
            }
            PsiFunction::Hampel { alpha, beta } => Err(Error::PreconditionViolated(format!(
                "hampel needs 0 < alpha < beta, got alpha = {alpha}, beta = {beta}"
            ))),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            PsiFunction::Huber { c } => huber(x, c),
            PsiFunction::Hampel { alpha, beta } => hampel(x, alpha, beta),
        }
    }

    /// Derivative away from the breakpoints.
    pub fn derivative(&self, x: f64) -> f64 {
        let a = x.abs();
        match *self {
            PsiFunction::Huber { c } => {
                if a < c {
                    1.0
                } else {
                    0.0
                }
            }
            PsiFunction::Hampel { alpha, beta } => {
                if a < alpha {
                    1.0
                } else if a < beta {
                    -alpha / (beta - alpha)
                } else {
                    0.0
                }
            }
        }
    }

    /// Kink locations, in increasing order.
    pub fn breakpoints(&self) -> Vec<f64> {
        match *self {
            PsiFunction::Huber { c } => vec![-c, c],
            PsiFunction::Hampel { alpha, beta } => vec![-beta, -alpha, alpha, beta],
        }
    }

    /// `sup |phi|`.
    pub fn bound(&self) -> f64 {
        match *self {
            PsiFunction::Huber { c } => c,
            PsiFunction::Hampel { alpha, .. } => alpha,
        }
    }

    /// `C_g` for `g` the `N(0, s_r^2)` density, in closed form.
    pub fn c_g_normal(&self) -> Result<f64> {
        match *self {
            PsiFunction::Huber { c } => c_g_huber_normal(c),
            PsiFunction::Hampel { alpha, beta } => c_g_hampel_normal(alpha, beta),
        }
    }
}

/// `median |x_i| / 0.6745`.
pub fn mad_scale(data: &[f64]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptySeries);
    }
    let mut abs: Vec<f64> = data.iter().map(|v| v.abs()).collect();
    if abs.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFiniteUpdate);
    }
    abs.sort_by(f64::total_cmp);
    let n = abs.len();
    let median = if n % 2 == 1 {
        abs[n / 2]
    } else {
        0.5 * (abs[n / 2 - 1] + abs[n / 2])
    };
    let s = median / MAD_CONSTANT;
    if s == 0.0 {
        return Err(Error::ZeroScale);
    }
    Ok(s)
}

/// Substitute scale for degenerate data, `1e-8 (1 + max |x_i|)`.
pub fn scale_floor(data: &[f64]) -> f64 {
    1e-8 * (1.0 + data.iter().fold(0.0_f64, |m, v| m.max(v.abs())))
}

/// `mad_scale` with the floor substituted on `ZeroScale`.
pub fn mad_scale_or_floor(data: &[f64]) -> Result<f64> {
    match mad_scale(data) {
        Err(Error::ZeroScale) => Ok(scale_floor(data)),
        other => other,
    }
}

fn check_scale(s_r: f64) -> Result<()> {
    if s_r > 0.0 && s_r.is_finite() {
        Ok(())
    } else {
        Err(Error::PreconditionViolated(format!(
            "residual scale must be positive, got {s_r}"
        )))
    }
}

/// `C_g = int_{-c s_r}^{c s_r} g`.
pub fn c_g_huber(c: f64, s_r: f64, g: &dyn Fn(f64) -> f64) -> Result<f64> {
    PsiFunction::huber(c)?;
    check_scale(s_r)?;
    adaptive_simpson(g, -c * s_r, c * s_r, C_G_TOL)
}

/// `2 Phi(c) - 1`.
pub fn c_g_huber_normal(c: f64) -> Result<f64> {
    PsiFunction::huber(c)?;
    Ok(2.0 * normal_cdf(c) - 1.0)
}

/// `C_g = int_{-a s}^{a s} g - a/(b-a) (int_{-b s}^{-a s} g + int_{a s}^{b s} g)`.
pub fn c_g_hampel(alpha: f64, beta: f64, s_r: f64, g: &dyn Fn(f64) -> f64) -> Result<f64> {
    PsiFunction::hampel(alpha, beta)?;
    check_scale(s_r)?;
    let (a, b) = (alpha * s_r, beta * s_r);
    let centre = adaptive_simpson(g, -a, a, C_G_TOL)?;
    let left = adaptive_simpson(g, -b, -a, C_G_TOL)?;
    let right = adaptive_simpson(g, a, b, C_G_TOL)?;
    Ok(centre - alpha / (beta - alpha) * (left + right))
}

/// Closed form of `c_g_hampel` for the normal density.
pub fn c_g_hampel_normal(alpha: f64, beta: f64) -> Result<f64> {
    PsiFunction::hampel(alpha, beta)?;
    let centre = 2.0 * normal_cdf(alpha) - 1.0;
    let tails = 2.0 * (normal_cdf(beta) - normal_cdf(alpha));
    Ok(centre - alpha / (beta - alpha) * tails)
}

/// The `N(0, s^2)` density.
pub fn normal_density(s: f64) -> impl Fn(f64) -> f64 {
    move |x| normal_pdf(x, 0.0, s)
}

/// `psi(theta, x) = s phi((x - theta) / s)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustLocation {
    phi: PsiFunction,
    scale: f64,
}

impl RobustLocation {
    pub fn new(phi: PsiFunction, scale: f64) -> Result<Self> {
        phi.validate()?;
        check_scale(scale)?;
        Ok(Self { phi, scale })
    }
}

impl EstimatingFunction for RobustLocation {
    fn dim(&self) -> usize {
        1
    }

    fn eval(&self, _t: usize, theta: &[f64], x: f64, _past: &[f64]) -> Vec<f64> {
        vec![self.scale * self.phi.eval((x - theta[0]) / self.scale)]
    }

    /// Holds for errors symmetric about `theta`.
    fn is_martingale_difference(&self) -> bool {
        true
    }

    fn breakpoints(&self, _t: usize, theta: &[f64], _past: &[f64]) -> Vec<f64> {
        self.phi
            .breakpoints()
            .into_iter()
            .map(|b| theta[0] + self.scale * b)
            .collect()
    }
}

/// Data scale `s_x` and residual scale `s_r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleEstimates {
    pub s_x: f64,
    pub s_r: f64,
}

impl ScaleEstimates {
    pub fn new(s_x: f64, s_r: f64) -> Result<Self> {
        if s_x > 0.0 && s_r > 0.0 && s_x.is_finite() && s_r.is_finite() {
            Ok(Self { s_x, s_r })
        } else {
            Err(Error::PreconditionViolated(format!(
                "scales must be positive, got s_x = {s_x}, s_r = {s_r}"
            )))
        }
    }
}

/// AR(1) GM estimating function
/// `s_x phi(X_{t-1}/s_x) s_r phi((X_t - theta X_{t-1})/s_r)`.
#[derive(Debug, Clone, Copy)]
pub struct GmPsi {
    phi: PsiFunction,
    scales: ScaleEstimates,
}

impl GmPsi {
    pub fn new(phi: PsiFunction, scales: ScaleEstimates) -> Result<Self> {
        phi.validate()?;
        Ok(Self { phi, scales })
    }

    fn weight(&self, prev: f64) -> f64 {
        self.scales.s_x * self.phi.eval(prev / self.scales.s_x)
    }
}

impl EstimatingFunction for GmPsi {
    fn dim(&self) -> usize {
        1
    }

    fn eval(&self, _t: usize, theta: &[f64], x: f64, past: &[f64]) -> Vec<f64> {
        let prev = past.last().copied().unwrap_or(0.0);
        let s_r = self.scales.s_r;
        vec![self.weight(prev) * s_r * self.phi.eval((x - theta[0] * prev) / s_r)]
    }

    fn breakpoints(&self, _t: usize, theta: &[f64], past: &[f64]) -> Vec<f64> {
        let prev = past.last().copied().unwrap_or(0.0);
        self.phi
            .breakpoints()
            .into_iter()
            .map(|b| theta[0] * prev + self.scales.s_r * b)
            .collect()
    }
}

/// `Delta Gamma_t = C_g s_x phi(X_{t-1}/s_x) X_{t-1}`.
#[derive(Debug, Clone)]
pub struct GmNormalizer {
    psi: GmPsi,
    c_g: f64,
    initial: f64,
}

impl GmNormalizer {
    pub fn new(psi: GmPsi, c_g: f64, initial: f64) -> Result<Self> {
        if !(c_g > 0.0 && c_g.is_finite()) {
            return Err(Error::NonPositiveCg(c_g));
        }
        Ok(Self { psi, c_g, initial })
    }
}

impl Normalizer for GmNormalizer {
    fn dim(&self) -> usize {
        1
    }

    fn initial(&self) -> Matrix {
        Matrix::scalar(self.initial)
    }

    fn increment(&self, _t: usize, _theta: &[f64], past: &[f64]) -> Result<Matrix> {
        let prev = past.last().copied().unwrap_or(0.0);
        Ok(Matrix::scalar(self.c_g * self.psi.weight(prev) * prev))
    }

    fn theta_free(&self) -> bool {
        true
    }
}

/// The GM recursion for AR(1). `series[0]` is `X_0`; the trajectory has
/// `series.len() - 1` records.
pub fn gm_recursion(
    series: &[f64],
    phi: PsiFunction,
    scales: ScaleEstimates,
    c_g: f64,
    theta0: f64,
    gamma0: f64,
) -> Result<Trajectory> {
    let psi = GmPsi::new(phi, scales)?;
    let normalizer = GmNormalizer::new(psi, c_g, gamma0)?;
    if series.len() < 2 {
        return Err(Error::EmptySeries);
    }
    let mut theta = theta0;
    let mut gamma = gamma0;
    let mut out = Trajectory::new(vec![theta0]);
    out.records.reserve(series.len() - 1);
    for i in 1..series.len() {
        let t = i;
        let past = &series[..i];
        gamma += normalizer.increment(t, &[theta], past)?[(0, 0)];
        let wrap = |e: Error| Error::StepFailed {
            step: t,
            source: Box::new(e),
        };
        if !(gamma.abs() > SINGULARITY_THRESHOLD) {
            return Err(wrap(Error::DegenerateNormalizer { value: gamma }));
        }
        let step = psi.eval(t, &[theta], series[i], past)[0] / gamma;
        theta += step;
        if !theta.is_finite() {
            return Err(wrap(Error::NonFiniteUpdate));
        }
        out.records.push(Record {
            t,
            theta: vec![theta],
            gamma: Matrix::scalar(gamma),
        });
    }
    Ok(out)
}
