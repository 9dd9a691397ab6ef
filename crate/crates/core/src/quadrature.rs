//! Gauss–Hermite and adaptive Simpson quadrature.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Recursion depth cap for adaptive Simpson.
pub const MAX_SIMPSON_DEPTH: usize = 50;

/// Number of equal panels adaptive Simpson starts from.
const INITIAL_PANELS: usize = 8;

/// A quadrature rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QuadratureRule {
    GaussHermite { nodes: usize },
    /// `radius` is the truncation half-width in units of the density's scale.
    AdaptiveSimpson { tol: f64, radius: f64 },
}

impl QuadratureRule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            QuadratureRule::GaussHermite { nodes } if nodes < 2 => Err(
                Error::PreconditionViolated(format!("Gauss-Hermite needs n >= 2, got {nodes}")),
            ),
            QuadratureRule::AdaptiveSimpson { tol, radius } if !(tol > 0.0 && radius > 0.0) => {
                Err(Error::PreconditionViolated(format!(
                    "adaptive Simpson needs tol > 0 and radius > 0, got {tol}, {radius}"
                )))
            }
            _ => Ok(()),
        }
    }
}

/// Quadrature knobs shared by every model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadratureSettings {
    pub gauss_hermite_nodes: usize,
    pub simpson_tol: f64,
    /// Truncation half-width in standard deviations.
    pub truncation_sd: f64,
}

impl Default for QuadratureSettings {
    fn default() -> Self {
        Self {
            gauss_hermite_nodes: 40,
            simpson_tol: 1e-9,
            truncation_sd: 10.0,
        }
    }
}

impl QuadratureSettings {
    pub fn gauss_hermite_rule(&self) -> QuadratureRule {
        QuadratureRule::GaussHermite {
            nodes: self.gauss_hermite_nodes,
        }
    }

    pub fn simpson_rule(&self) -> QuadratureRule {
        QuadratureRule::AdaptiveSimpson {
            tol: self.simpson_tol,
            radius: self.truncation_sd,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.gauss_hermite_rule().validate()?;
        self.simpson_rule().validate()
    }

    /// `E f(Z)` for `Z ~ N(mean, sd^2)`.
    ///
    /// Smooth integrands use Gauss–Hermite. With breakpoints the truncated
    /// range is split there and each piece is integrated by adaptive Simpson
    /// against the normal density.
    pub fn normal_expectation(
        &self,
        f: &dyn Fn(f64) -> Vec<f64>,
        dim: usize,
        mean: f64,
        sd: f64,
        breakpoints: &[f64],
    ) -> Result<Vec<f64>> {
        if breakpoints.is_empty() {
            return gauss_hermite(f, mean, sd, self.gauss_hermite_nodes);
        }
        let density = |z: f64| normal_pdf(z, mean, sd);
        self.density_expectation(f, dim, &density, mean, sd, breakpoints)
    }

    /// `int f(x) g(x) dx` over `center +- truncation_sd * scale`, split at
    /// `breakpoints`.
    pub fn density_expectation(
        &self,
        f: &dyn Fn(f64) -> Vec<f64>,
        dim: usize,
        density: &dyn Fn(f64) -> f64,
        center: f64,
        scale: f64,
        breakpoints: &[f64],
    ) -> Result<Vec<f64>> {
        let lo = center - self.truncation_sd * scale;
        let hi = center + self.truncation_sd * scale;
        let mut cuts: Vec<f64> = breakpoints
            .iter()
            .copied()
            .filter(|b| b.is_finite() && *b > lo && *b < hi)
            .collect();
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        let mut edges = Vec::with_capacity(cuts.len() + 2);
        edges.push(lo);
        edges.extend(cuts);
        edges.push(hi);

        let weighted = |x: f64| {
            let w = density(x);
            let mut v = f(x);
            for vi in v.iter_mut() {
                *vi *= w;
            }
            v
        };
        let pieces = edges.len() - 1;
        let mut total = vec![0.0; dim];
        for w in edges.windows(2) {
            let part = adaptive_simpson_vec(&weighted, dim, w[0], w[1], self.simpson_tol / pieces as f64)?;
            for (t, p) in total.iter_mut().zip(part) {
                *t += p;
            }
        }
        Ok(total)
    }
}

pub fn normal_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
}

/// Standard normal distribution function.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-z / std::f64::consts::SQRT_2)
}

/// Nodes and weights for `int e^{-x^2} f(x) dx`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussHermite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussHermite {
    /// Newton iteration on the orthonormal Hermite recurrence.
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::PreconditionViolated(format!(
                "Gauss-Hermite needs n >= 2, got {n}"
            )));
        }
        const PI_M4: f64 = 0.751_125_544_464_942_5;
        let nf = n as f64;
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let mut z = 0.0_f64;
        for i in 0..n.div_ceil(2) {
            z = match i {
                0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-0.16667),
                1 => z - 1.14 * nf.powf(0.426) / z,
                2 => 1.86 * z - 0.86 * nodes[0],
                3 => 1.91 * z - 0.91 * nodes[1],
                _ => 2.0 * z - nodes[i - 2],
            };
            let mut derivative = 0.0;
            for _ in 0..100 {
                let mut p1 = PI_M4;
                let mut p2 = 0.0;
                for j in 0..n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
                }
                derivative = (2.0 * nf).sqrt() * p2;
                let previous = z;
                z = previous - p1 / derivative;
                if (z - previous).abs() <= 1e-15 * z.abs().max(1.0) {
                    break;
                }
            }
            nodes[i] = z;
            nodes[n - 1 - i] = -z;
            weights[i] = 2.0 / (derivative * derivative);
            weights[n - 1 - i] = weights[i];
        }
        Ok(Self { nodes, weights })
    }

    /// Shared cached rule for `n` nodes.
    pub fn cached(n: usize) -> Result<Arc<Self>> {
        static CACHE: OnceLock<Mutex<HashMap<usize, Arc<GaussHermite>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(Default::default);
        if let Some(rule) = cache.lock().expect("quadrature cache poisoned").get(&n) {
            return Ok(rule.clone());
        }
        let rule = Arc::new(Self::new(n)?);
        cache
            .lock()
            .expect("quadrature cache poisoned")
            .insert(n, rule.clone());
        Ok(rule)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `E f(Z)` for `Z ~ N(mean, sd^2)`.
    pub fn expectation(&self, f: &dyn Fn(f64) -> Vec<f64>, mean: f64, sd: f64) -> Result<Vec<f64>> {
        let scale = std::f64::consts::SQRT_2 * sd;
        let norm = std::f64::consts::PI.sqrt();
        let mut acc: Option<Vec<f64>> = None;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            let at = mean + scale * x;
            let v = f(at);
            if v.iter().any(|c| !c.is_finite()) {
                return Err(Error::NonFiniteIntegrand { at });
            }
            let acc = acc.get_or_insert_with(|| vec![0.0; v.len()]);
            for (a, c) in acc.iter_mut().zip(v) {
                *a += w * c;
            }
        }
        Ok(acc
            .unwrap_or_default()
            .into_iter()
            .map(|a| a / norm)
            .collect())
    }
}

/// `E f(Z)`, `Z ~ N(mean, sd^2)`, by `n`-node Gauss–Hermite.
pub fn gauss_hermite(
    f: &dyn Fn(f64) -> Vec<f64>,
    mean: f64,
    sd: f64,
    n: usize,
) -> Result<Vec<f64>> {
    if !(sd > 0.0) || !mean.is_finite() {
        return Err(Error::PreconditionViolated(format!(
            "Gauss-Hermite needs finite mean and sd > 0, got {mean}, {sd}"
        )));
    }
    GaussHermite::cached(n)?.expectation(f, mean, sd)
}

/// `int_a^b f` to absolute tolerance `tol`.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<f64> {
    let g = |x: f64| vec![f(x)];
    Ok(adaptive_simpson_vec(&g, 1, a, b, tol)?[0])
}

/// Vector-valued adaptive Simpson; the error test uses the max norm.
pub fn adaptive_simpson_vec(
    f: &dyn Fn(f64) -> Vec<f64>,
    dim: usize,
    a: f64,
    b: f64,
    tol: f64,
) -> Result<Vec<f64>> {
    if !(a < b) || !(tol > 0.0) || !a.is_finite() || !b.is_finite() {
        return Err(Error::PreconditionViolated(format!(
            "adaptive Simpson needs a < b and tol > 0, got [{a}, {b}], tol {tol}"
        )));
    }
    let eval = |x: f64| -> Result<Vec<f64>> {
        let v = f(x);
        if v.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: v.len(),
            });
        }
        if v.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFiniteIntegrand { at: x });
        }
        Ok(v)
    };
    let width = (b - a) / INITIAL_PANELS as f64;
    let panel_tol = tol / INITIAL_PANELS as f64;
    let mut total = vec![0.0; dim];
    let mut left_value = eval(a)?;
    for k in 0..INITIAL_PANELS {
        let lo = a + width * k as f64;
        let hi = if k + 1 == INITIAL_PANELS { b } else { lo + width };
        let mid = 0.5 * (lo + hi);
        let fm = eval(mid)?;
        let fb = eval(hi)?;
        let whole = simpson(lo, hi, &left_value, &fm, &fb);
        let part = simpson_step(&eval, lo, hi, &left_value, &fm, &fb, &whole, panel_tol, 0)?;
        for (t, p) in total.iter_mut().zip(part) {
            *t += p;
        }
        left_value = fb;
    }
    Ok(total)
}

fn simpson(a: f64, b: f64, fa: &[f64], fm: &[f64], fb: &[f64]) -> Vec<f64> {
    let h = (b - a) / 6.0;
    fa.iter()
        .zip(fm)
        .zip(fb)
        .map(|((x, y), z)| h * (x + 4.0 * y + z))
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn simpson_step(
    eval: &dyn Fn(f64) -> Result<Vec<f64>>,
    a: f64,
    b: f64,
    fa: &[f64],
    fm: &[f64],
    fb: &[f64],
    whole: &[f64],
    tol: f64,
    depth: usize,
) -> Result<Vec<f64>> {
    let m = 0.5 * (a + b);
    let flm = eval(0.5 * (a + m))?;
    let frm = eval(0.5 * (m + b))?;
    let left = simpson(a, m, fa, &flm, fm);
    let right = simpson(m, b, fm, &frm, fb);
    let err = left
        .iter()
        .zip(&right)
        .zip(whole)
        .map(|((l, r), w)| (l + r - w).abs())
        .fold(0.0_f64, f64::max);
    if err <= 15.0 * tol {
        return Ok(left
            .iter()
            .zip(&right)
            .zip(whole)
            .map(|((l, r), w)| l + r + (l + r - w) / 15.0)
            .collect());
    }
    if depth + 1 >= MAX_SIMPSON_DEPTH {
        return Err(Error::MaxDepthExceeded(MAX_SIMPSON_DEPTH));
    }
    let mut lv = simpson_step(eval, a, m, fa, &flm, fm, &left, 0.5 * tol, depth + 1)?;
    let rv = simpson_step(eval, m, b, fm, &frm, fb, &right, 0.5 * tol, depth + 1)?;
    for (l, r) in lv.iter_mut().zip(rv) {
        *l += r;
    }
    Ok(lv)
}
