//! Experiment configuration read by the command-line front end.
//!
//! Documents are JSON; unknown keys are rejected. The schema lives in
//! `schema/experiment.schema.json`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::diagnostics::ScalingSequence;
use crate::engine::{EstimatingFunction, GammaMode, Normalizer};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::models::{
    galton_watson_poisson, ArFisherNormalizer, ArModel, ArScore, CaefFamily, CaefModel, CaefNormalizer, CaefScore,
    ConditionalModel, Innovation, NormalLocation, ScoreFunction, DEFAULT_RIDGE,
};
use crate::normalizers::{
    bprime_normalizer, fisher_normalizer, score_covariance_normalizer, tuned, DEFAULT_FD_STEP,
};
use crate::quadrature::QuadratureSettings;
use crate::robust::{GmNormalizer, GmPsi, PsiFunction, RobustLocation};
use crate::simulator::{prefix_fit, AoConfig, ReplicationPlan};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimator: Option<EstimatorConfig>,
    #[serde(default)]
    pub plan: ReplicationPlan,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<DiagnosticsConfig>,
    #[serde(default)]
    pub quadrature: QuadratureSettings,
    #[serde(default)]
    pub output: OutputConfig,
}

fn one() -> f64 {
    1.0
}

fn gw_mean() -> f64 {
    1.5
}

fn gw_x0() -> f64 {
    10.0
}

fn ao_theta() -> f64 {
    AoConfig::default().theta
}

fn ao_eps() -> f64 {
    AoConfig::default().eps
}

fn ao_sigma2() -> f64 {
    AoConfig::default().sigma2
}

fn unit_gaussian() -> Innovation {
    Innovation::Gaussian { sigma: 1.0 }
}

/// Data-generating model, selected by `id`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    NormalLocation {
        #[serde(default = "one")]
        sigma: f64,
        #[serde(default)]
        theta: f64,
    },
    GwPoisson {
        /// Offspring mean `exp(lambda)`.
        #[serde(default = "gw_mean")]
        mean: f64,
        #[serde(default = "gw_x0")]
        x0: f64,
    },
    Ar {
        theta: Vec<f64>,
        #[serde(default = "unit_gaussian")]
        innovation: Innovation,
    },
    Ao {
        #[serde(default = "ao_theta")]
        theta: f64,
        #[serde(default = "ao_eps")]
        eps: f64,
        #[serde(default = "ao_sigma2")]
        sigma2: f64,
    },
}

impl ModelConfig {
    pub fn dim(&self) -> usize {
        match self {
            ModelConfig::Ar { theta, .. } => theta.len(),
            _ => 1,
        }
    }

    /// The parameter the model simulates from.
    pub fn true_theta(&self) -> Vec<f64> {
        match self {
            ModelConfig::NormalLocation { theta, .. } => vec![*theta],
            ModelConfig::GwPoisson { mean, .. } => vec![mean.ln()],
            ModelConfig::Ar { theta, .. } => theta.clone(),
            ModelConfig::Ao { theta, .. } => vec![*theta],
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelConfig::NormalLocation { sigma, theta } => {
                NormalLocation::new(*sigma)?;
                finite("model.theta", *theta)
            }
            ModelConfig::GwPoisson { mean, x0 } => {
                if !(*mean > 0.0 && mean.is_finite()) {
                    return Err(invalid(format!("model.mean must be positive, got {mean}")));
                }
                if !(*x0 >= 0.0 && x0.fract() == 0.0) {
                    return Err(invalid(format!("model.x0 must be a non-negative integer, got {x0}")));
                }
                Ok(())
            }
            ModelConfig::Ar { theta, innovation } => {
                ArModel::new(theta.clone(), *innovation)?;
                Ok(())
            }
            ModelConfig::Ao { theta, eps, sigma2 } => AoConfig {
                theta: *theta,
                eps: *eps,
                sigma2: *sigma2,
                ..AoConfig::default()
            }
            .validate(),
        }
    }

    /// The model as a conditional density, where it has one.
    pub fn conditional_model(&self, quadrature: QuadratureSettings) -> Option<Arc<dyn ConditionalModel>> {
        match self {
            ModelConfig::NormalLocation { sigma, .. } => Some(Arc::new(
                NormalLocation::new(*sigma).ok()?.with_quadrature(quadrature),
            )),
            ModelConfig::GwPoisson { .. } => Some(Arc::new(CaefModel::galton_watson())),
            ModelConfig::Ar { theta, innovation } => Some(Arc::new(
                ArModel::new(theta.clone(), *innovation).ok()?.with_quadrature(quadrature),
            )),
            ModelConfig::Ao { .. } => None,
        }
    }
}

/// Estimating function selector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "psi", rename_all = "snake_case", deny_unknown_fields)]
pub enum PsiConfig {
    /// The model score `l_t`.
    #[default]
    Score,
    Huber {
        c: f64,
    },
    Hampel {
        alpha: f64,
        beta: f64,
    },
}

impl PsiConfig {
    pub fn robust(&self) -> Result<Option<PsiFunction>> {
        Ok(match *self {
            PsiConfig::Score => None,
            PsiConfig::Huber { c } => Some(PsiFunction::huber(c)?),
            PsiConfig::Hampel { alpha, beta } => Some(PsiFunction::hampel(alpha, beta)?),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NormalizerId {
    #[default]
    Fisher,
    Bprime,
    ScoreCovariance,
}

/// `C + c_t Gamma_t` with `C = c I`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct TuningConfig {
    /// Ridge `c`; the AR default is the model ridge.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    /// `c_t` for the first steps; one afterwards.
    pub schedule: Vec<f64>,
}

fn fd_step() -> f64 {
    DEFAULT_FD_STEP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    #[serde(default)]
    pub psi: PsiConfig,
    #[serde(default)]
    pub normalizer: NormalizerId,
    #[serde(default)]
    pub tuning: TuningConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta0: Option<Vec<f64>>,
    #[serde(default)]
    pub mode: GammaMode,
    #[serde(default = "fd_step")]
    pub fd_step: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            psi: PsiConfig::default(),
            normalizer: NormalizerId::default(),
            tuning: TuningConfig::default(),
            theta0: None,
            mode: GammaMode::default(),
            fd_step: DEFAULT_FD_STEP,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScalingId {
    #[default]
    SqrtTIdentity,
    HSqrt,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSet {
    #[serde(default = "yes")]
    pub linearity: bool,
    #[serde(default = "yes")]
    pub condition_e: bool,
    #[serde(default)]
    pub normality: bool,
}

impl Default for ProbeSet {
    fn default() -> Self {
        Self {
            linearity: true,
            condition_e: true,
            normality: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_true: Option<Vec<f64>>,
    #[serde(default)]
    pub scaling: ScalingId,
    #[serde(default = "yes")]
    pub enabled: bool,
    #[serde(default)]
    pub probes: ProbeSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
}

fn invalid(msg: String) -> Error {
    Error::PreconditionViolated(msg)
}

fn finite(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be finite")))
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.plan.validate()?;
        if let Some(est) = &self.estimator {
            est.psi.robust()?;
            if let Some(theta0) = &est.theta0 {
                if theta0.len() != self.model.dim() {
                    return Err(invalid(format!(
                        "estimator.theta0 has {} components, model has {}",
                        theta0.len(),
                        self.model.dim()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn estimator_or_default(&self) -> EstimatorConfig {
        self.estimator.clone().unwrap_or_default()
    }

    /// The scaling sequence requested by the diagnostics block.
    pub fn scaling(&self, id: ScalingId) -> Result<ScalingSequence> {
        match (id, &self.model) {
            (ScalingId::SqrtTIdentity, m) => Ok(ScalingSequence::sqrt_t(m.dim())),
            (ScalingId::HSqrt, ModelConfig::GwPoisson { .. }) => {
                Ok(ScalingSequence::h_sqrt(Arc::new(galton_watson_poisson()), 0.0))
            }
            (ScalingId::HSqrt, _) => Err(invalid(
                "diagnostics.scaling = h_sqrt needs model.id = gw_poisson".into(),
            )),
        }
    }
}

/// An estimating function, normalizer and start value ready for the engine.
#[derive(Clone)]
pub struct BuiltEstimator {
    pub psi: Arc<dyn EstimatingFunction>,
    pub gamma: Arc<dyn Normalizer>,
    pub theta0: Vec<f64>,
    pub presample: usize,
    pub mode: GammaMode,
    pub model: Option<Arc<dyn ConditionalModel>>,
}

/// Builds the estimator for `data`. AR(1)-type data with a robust `psi`, and
/// all AO data, follow the prefix protocol: the first `plan.prefix`
/// observations give the start value, the scales and `Gamma_0`.
pub fn build_estimator(config: &ExperimentConfig, data: &[f64]) -> Result<BuiltEstimator> {
    let est = config.estimator_or_default();
    let robust = est.psi.robust()?;
    let m = config.model.dim();
    let prefix_protocol = matches!(config.model, ModelConfig::Ao { .. })
        || (robust.is_some() && matches!(&config.model, ModelConfig::Ar { theta, .. } if theta.len() == 1));
    if prefix_protocol {
        return build_prefix_estimator(config, &est, robust, data);
    }
    let model = config
        .model
        .conditional_model(config.quadrature)
        .ok_or_else(|| invalid("model has no conditional density".into()))?;
    let presample = model.presample();
    let psi: Arc<dyn EstimatingFunction> = match (robust, &config.model) {
        (None, ModelConfig::GwPoisson { .. }) => Arc::new(CaefScore::new(Arc::new(galton_watson_poisson()))),
        (None, ModelConfig::Ar { theta, innovation }) => Arc::new(ArScore::new(theta.len(), *innovation)),
        (None, _) => Arc::new(ScoreFunction::new(model.clone())),
        (Some(phi), ModelConfig::NormalLocation { sigma, .. }) => Arc::new(RobustLocation::new(phi, *sigma)?),
        (Some(_), _) => {
            return Err(invalid(
                "huber/hampel psi needs model.id = normal_location, ao, or ar of order 1".into(),
            ))
        }
    };
    let base: Arc<dyn Normalizer> = match est.normalizer {
        NormalizerId::Fisher => match &config.model {
            ModelConfig::GwPoisson { .. } => {
                let family: Arc<dyn CaefFamily> = Arc::new(galton_watson_poisson());
                Arc::new(CaefNormalizer::new(family, 0.0))
            }
            _ => Arc::new(fisher_normalizer(model.clone())),
        },
        NormalizerId::Bprime => Arc::new(bprime_normalizer(psi.clone(), model.clone(), est.fd_step)?),
        NormalizerId::ScoreCovariance => Arc::new(score_covariance_normalizer(psi.clone(), model.clone())?),
    };
    let ridge = est.tuning.c.unwrap_or(match config.model {
        ModelConfig::Ar { .. } => DEFAULT_RIDGE,
        _ => 0.0,
    });
    finite("estimator.tuning.c", ridge)?;
    let gamma: Arc<dyn Normalizer> = Arc::new(tuned(base, Matrix::scaled_identity(m, ridge), est.tuning.schedule.clone())?);
    Ok(BuiltEstimator {
        psi,
        gamma,
        theta0: est.theta0.clone().unwrap_or_else(|| vec![0.0; m]),
        presample,
        mode: est.mode,
        model: Some(model),
    })
}

fn build_prefix_estimator(
    config: &ExperimentConfig,
    est: &EstimatorConfig,
    robust: Option<PsiFunction>,
    data: &[f64],
) -> Result<BuiltEstimator> {
    let prefix = config.plan.prefix;
    if prefix < 2 || data.len() <= prefix {
        return Err(invalid(format!(
            "prefix protocol needs plan.prefix >= 2 and more than {prefix} observations, got {}",
            data.len()
        )));
    }
    if est.normalizer != NormalizerId::Fisher {
        return Err(invalid(
            "AR(1) prefix estimators use their own normalizer; set estimator.normalizer = fisher".into(),
        ));
    }
    let fit = prefix_fit(&data[..prefix])?;
    let theta0 = est.theta0.clone().unwrap_or_else(|| vec![fit.theta0]);
    let (psi, gamma): (Arc<dyn EstimatingFunction>, Arc<dyn Normalizer>) = match robust {
        None => (
            Arc::new(ArScore::new(1, unit_gaussian())),
            Arc::new(ArFisherNormalizer::new(1.0, Matrix::scalar(fit.information))),
        ),
        Some(phi) => {
            let c_g = phi.c_g_normal()?;
            let s_x = fit.scales.s_x;
            let gamma0: f64 = data[..prefix]
                .windows(2)
                .map(|w| c_g * s_x * phi.eval(w[0] / s_x) * w[0])
                .sum();
            let psi = GmPsi::new(phi, fit.scales)?;
            (Arc::new(psi), Arc::new(GmNormalizer::new(psi, c_g, gamma0)?))
        }
    };
    Ok(BuiltEstimator {
        psi,
        gamma,
        theta0,
        presample: prefix,
        mode: est.mode,
        model: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_parses() {
        let c = ExperimentConfig::from_json(r#"{"model": {"id": "normal_location"}}"#).unwrap();
        assert_eq!(c.model, ModelConfig::NormalLocation { sigma: 1.0, theta: 0.0 });
        assert_eq!(c.plan, ReplicationPlan::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        for text in [
            r#"{"model": {"id": "normal_location"}, "extra": 1}"#,
            r#"{"model": {"id": "normal_location", "mu": 1}}"#,
            r#"{"model": {"id": "ao"}, "estimator": {"psi": {"psi": "huber", "c": 1.8, "k": 2}}}"#,
            r#"{"model": {"id": "ao"}, "plan": {"reps": 3}}"#,
        ] {
            assert!(ExperimentConfig::from_json(text).is_err(), "{text}");
        }
    }

    #[test]
    fn psi_blocks_parse() {
        let c = ExperimentConfig::from_json(
            r#"{"model": {"id": "ao"}, "estimator": {"psi": {"psi": "hampel", "alpha": 1.8, "beta": 4}}}"#,
        )
        .unwrap();
        assert_eq!(
            c.estimator.unwrap().psi,
            PsiConfig::Hampel { alpha: 1.8, beta: 4.0 }
        );
        let h: PsiConfig = serde_json::from_str(r#"{"psi": "huber", "c": 1.8}"#).unwrap();
        assert_eq!(h, PsiConfig::Huber { c: 1.8 });
    }

    #[test]
    fn round_trip() {
        let c = ExperimentConfig::from_json(
            r#"{"model": {"id": "ar", "theta": [0.5, 0.1]}, "estimator": {"tuning": {"c": 2.0}}}"#,
        )
        .unwrap();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), c);
    }

    #[test]
    fn invalid_values_rejected() {
        let c = ExperimentConfig::from_json(r#"{"model": {"id": "normal_location", "sigma": -1}}"#).unwrap();
        assert!(c.validate().is_err());
        let c = ExperimentConfig::from_json(
            r#"{"model": {"id": "normal_location"}, "estimator": {"theta0": [1, 2]}}"#,
        )
        .unwrap();
        assert!(c.validate().is_err());
    }
}
