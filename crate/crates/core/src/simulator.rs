//! Data generators and the seeded replication harness.
//!
//! Replication `r` draws its series from `mix_seed(base_seed, r)`. Results are
//! collected by replication index and summed in that order, so the output
//! does not depend on the number of worker threads.

use std::sync::Arc;

use rand::RngExt;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{linearity_residual, normality_check, NormalityReport, ScalingSequence};
use crate::engine::{linear_statistic, Recursion, Trajectory};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::models::{
    ar_likelihood_run, ArModel, CaefFamily, ConditionalModel, IidModel, Innovation,
    NormalLocation, ScoreFunction,
};
use crate::normalizers::{fisher_normalizer, tuned};
use crate::rng::{mix_seed, rng_from_seed, rng_stream, SimRng};
use crate::robust::{gm_recursion, mad_scale_or_floor, PsiFunction, ScaleEstimates};

/// Base seed of the packaged experiments.
pub const DEFAULT_SEED: u64 = 20_100_401;

/// Largest tolerated fraction of failed replications.
pub const MAX_FAILURE_FRACTION: f64 = 0.05;

/// Additive-outlier AR(1): `Y_t = theta Y_{t-1} + w_t`, `X_t = Y_t + v_t`
/// with `v_t` zero with probability `1 - eps` and `N(0, sigma2)` otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AoConfig {
    pub theta: f64,
    pub eps: f64,
    pub sigma2: f64,
    pub n: usize,
    pub burn_in: usize,
    pub seed: u64,
}

impl Default for AoConfig {
    fn default() -> Self {
        Self {
            theta: 0.6,
            eps: 0.05,
            sigma2: 9.0,
            n: 230,
            burn_in: 100,
            seed: DEFAULT_SEED,
        }
    }
}

impl AoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.eps) {
            return Err(Error::PreconditionViolated(format!(
                "eps must lie in [0, 1], got {}",
                self.eps
            )));
        }
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(Error::PreconditionViolated(format!(
                "sigma2 must be positive, got {}",
                self.sigma2
            )));
        }
        if !self.theta.is_finite() {
            return Err(Error::PreconditionViolated("theta must be finite".into()));
        }
        Ok(())
    }
}

/// `burn_in + n` observations from `Y_0 = 0`. Innovations and contamination
/// come from separate generators; both are advanced every step.
pub fn simulate_ao(config: &AoConfig, innovations: &mut SimRng, contamination: &mut SimRng) -> Vec<f64> {
    let sigma = config.sigma2.sqrt();
    let mut y = 0.0;
    (0..config.burn_in + config.n)
        .map(|_| {
            let w: f64 = StandardNormal.sample(innovations);
            y = config.theta * y + w;
            let u: f64 = contamination.random();
            let z: f64 = StandardNormal.sample(contamination);
            if u < config.eps {
                y + sigma * z
            } else {
                y
            }
        })
        .collect()
}

/// The `n` observations after burn-in, seeded from `config.seed`.
pub fn ao_series(config: &AoConfig) -> Result<Vec<f64>> {
    config.validate()?;
    let mut innovations = rng_stream(config.seed, 0);
    let mut contamination = rng_stream(config.seed, 1);
    let mut x = simulate_ao(config, &mut innovations, &mut contamination);
    Ok(x.split_off(config.burn_in))
}

/// `X_0, ..., X_n` of a Galton–Watson chain started at `x0`.
pub fn simulate_chain(family: &dyn CaefFamily, theta: f64, x0: f64, n: usize, rng: &mut SimRng) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    out.push(x0);
    for _ in 0..n {
        let prev = *out.last().expect("non-empty");
        out.push(family.sample_transition(theta, prev, rng));
    }
    out
}

/// `n` i.i.d. draws.
pub fn simulate_iid(model: &dyn IidModel, theta: &[f64], n: usize, rng: &mut SimRng) -> Vec<f64> {
    (0..n).map(|_| model.sample(theta, rng)).collect()
}

/// Replication layout of a Monte Carlo experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplicationPlan {
    pub replications: usize,
    pub n: usize,
    pub prefix: usize,
    pub burn_in: usize,
    pub base_seed: u64,
    /// First reported step.
    pub report_from: usize,
}

impl Default for ReplicationPlan {
    fn default() -> Self {
        Self {
            replications: 300,
            n: 200,
            prefix: 30,
            burn_in: 100,
            base_seed: DEFAULT_SEED,
            report_from: 5,
        }
    }
}

impl ReplicationPlan {
    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::PreconditionViolated("replications must be >= 1".into()));
        }
        if self.n == 0 || self.report_from == 0 || self.report_from > self.n {
            return Err(Error::PreconditionViolated(format!(
                "need 1 <= report_from <= n, got report_from = {}, n = {}",
                self.report_from, self.n
            )));
        }
        Ok(())
    }

    pub fn seed(&self, replication: usize) -> u64 {
        mix_seed(self.base_seed, replication as u64)
    }

    pub fn report_times(&self) -> Vec<usize> {
        (self.report_from..=self.n).collect()
    }
}

/// `mse[e][k] = mean_r |theta^{(e)}_{times[k], r} - theta|^2` over the
/// successful replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseTable {
    pub estimators: Vec<String>,
    pub times: Vec<usize>,
    pub mse: Vec<Vec<f64>>,
    pub replications: usize,
    pub failures: usize,
}

impl MseTable {
    pub fn get(&self, estimator: &str, t: usize) -> Option<f64> {
        let e = self.estimators.iter().position(|id| id == estimator)?;
        let k = self.times.iter().position(|s| *s == t)?;
        Some(self.mse[e][k])
    }
}

/// Runs `f(0..count)` on `workers` threads and returns results in index order.
pub fn parallel_map<T, F>(workers: usize, count: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::PreconditionViolated(format!("thread pool: {e}")))?;
    Ok(pool.install(|| (0..count).into_par_iter().map(&f).collect()))
}

fn check_failures(failed: usize, total: usize) -> Result<()> {
    if failed as f64 > MAX_FAILURE_FRACTION * total as f64 {
        return Err(Error::ReplicationFailures { failed, total });
    }
    Ok(())
}

/// Squared errors of every estimator at the reported times.
fn squared_errors(
    trajectories: &[Trajectory],
    theta_true: &[f64],
    times: &[usize],
    estimators: usize,
) -> Result<Vec<Vec<f64>>> {
    if trajectories.len() != estimators {
        return Err(Error::DimensionMismatch {
            expected: estimators,
            found: trajectories.len(),
        });
    }
    trajectories
        .iter()
        .map(|traj| {
            times
                .iter()
                .map(|t| {
                    let theta = traj.theta_at(*t).ok_or(Error::GridMismatch)?;
                    Ok(theta.iter().zip(theta_true).map(|(a, b)| (a - b).powi(2)).sum())
                })
                .collect()
        })
        .collect()
}

/// Per-estimator MSE curves over `plan.replications` seeded series.
///
/// A replication whose experiment fails is excluded; more than 5% failures
/// abort with `ReplicationFailures`.
pub fn replicate<G, E>(
    plan: &ReplicationPlan,
    estimators: &[&str],
    theta_true: &[f64],
    workers: usize,
    generate: G,
    experiment: E,
) -> Result<MseTable>
where
    G: Fn(u64) -> Vec<f64> + Sync + Send,
    E: Fn(&[f64]) -> Result<Vec<Trajectory>> + Sync + Send,
{
    plan.validate()?;
    let times = plan.report_times();
    let outcomes = parallel_map(workers, plan.replications, |r| {
        let series = generate(plan.seed(r));
        experiment(&series).and_then(|t| squared_errors(&t, theta_true, &times, estimators.len()))
    })?;
    let mut sums = vec![vec![0.0; times.len()]; estimators.len()];
    let mut failures = 0;
    for outcome in &outcomes {
        match outcome {
            Ok(errors) => {
                for (row, e) in sums.iter_mut().zip(errors) {
                    for (s, v) in row.iter_mut().zip(e) {
                        *s += v;
                    }
                }
            }
            Err(_) => failures += 1,
        }
    }
    check_failures(failures, plan.replications)?;
    let ok = (plan.replications - failures) as f64;
    Ok(MseTable {
        estimators: estimators.iter().map(|s| s.to_string()).collect(),
        times,
        mse: sums
            .into_iter()
            .map(|row| row.into_iter().map(|s| s / ok).collect())
            .collect(),
        replications: plan.replications,
        failures,
    })
}

/// Prefix least-squares fit and the frozen scales derived from it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrefixFit {
    pub theta0: f64,
    pub scales: ScaleEstimates,
    /// `sum_{s=1}^{p-1} X_{s-1}^2`.
    pub information: f64,
}

/// AR(1) least squares on `prefix`, `s_x` from the prefix data and `s_r`
/// from the prefix residuals.
pub fn prefix_fit(prefix: &[f64]) -> Result<PrefixFit> {
    if prefix.len() < 2 {
        return Err(Error::InsufficientSamples {
            found: prefix.len(),
            required: 2,
        });
    }
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for w in prefix.windows(2) {
        sxy += w[0] * w[1];
        sxx += w[0] * w[0];
    }
    if !(sxx > 0.0) {
        return Err(Error::DegenerateNormalizer { value: sxx });
    }
    let theta0 = sxy / sxx;
    let residuals: Vec<f64> = prefix.windows(2).map(|w| w[1] - theta0 * w[0]).collect();
    let scales = ScaleEstimates::new(mad_scale_or_floor(prefix)?, mad_scale_or_floor(&residuals)?)?;
    Ok(PrefixFit {
        theta0,
        scales,
        information: sxx,
    })
}

/// Least squares continued recursively past the prefix. `series[prefix - 1]`
/// serves as `X_0`.
pub fn ls_estimator(series: &[f64], prefix: usize, fit: &PrefixFit) -> Result<Trajectory> {
    let model = ArModel::new(vec![fit.theta0], Innovation::Gaussian { sigma: 1.0 })?;
    ar_likelihood_run(
        &model,
        &[fit.theta0],
        Matrix::scalar(fit.information),
        &series[prefix - 1..],
    )
}

/// GM recursion past the prefix, with `Gamma_0` accumulated over the prefix.
pub fn gm_estimator(series: &[f64], prefix: usize, fit: &PrefixFit, phi: PsiFunction) -> Result<Trajectory> {
    let c_g = phi.c_g_normal()?;
    let s_x = fit.scales.s_x;
    let gamma0: f64 = series[..prefix]
        .windows(2)
        .map(|w| c_g * s_x * phi.eval(w[0] / s_x) * w[0])
        .sum();
    gm_recursion(&series[prefix - 1..], phi, fit.scales, c_g, fit.theta0, gamma0)
}

/// The AO study: least squares against Huber and Hampel GM recursions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Fig1Config {
    pub theta: f64,
    pub eps: f64,
    pub sigma2: f64,
    pub c: f64,
    pub alpha: f64,
    pub beta: f64,
    pub plan: ReplicationPlan,
}

impl Default for Fig1Config {
    fn default() -> Self {
        Self {
            theta: 0.6,
            eps: 0.05,
            sigma2: 9.0,
            c: 1.8,
            alpha: 1.8,
            beta: 4.0,
            plan: ReplicationPlan::default(),
        }
    }
}

pub const FIG1_ESTIMATORS: [&str; 3] = ["ls", "huber_gm", "hampel_gm"];

impl Fig1Config {
    pub fn ao(&self, seed: u64) -> AoConfig {
        AoConfig {
            theta: self.theta,
            eps: self.eps,
            sigma2: self.sigma2,
            n: self.plan.prefix + self.plan.n,
            burn_in: self.plan.burn_in,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.plan.validate()?;
        self.ao(0).validate()?;
        PsiFunction::huber(self.c)?;
        PsiFunction::hampel(self.alpha, self.beta)?;
        if self.plan.prefix < 2 {
            return Err(Error::PreconditionViolated("prefix must be >= 2".into()));
        }
        Ok(())
    }

    /// `ls`, `huber_gm` and `hampel_gm` on one series.
    pub fn estimators(&self, series: &[f64]) -> Result<Vec<Trajectory>> {
        let prefix = self.plan.prefix;
        let fit = prefix_fit(&series[..prefix])?;
        Ok(vec![
            ls_estimator(series, prefix, &fit)?,
            gm_estimator(series, prefix, &fit, PsiFunction::huber(self.c)?)?,
            gm_estimator(series, prefix, &fit, PsiFunction::hampel(self.alpha, self.beta)?)?,
        ])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fig1Output {
    pub mse: MseTable,
    /// Single realization from replication 0.
    pub trace: Vec<(String, Trajectory)>,
}

pub fn run_fig1(config: &Fig1Config, workers: usize) -> Result<Fig1Output> {
    config.validate()?;
    let generate = |seed: u64| ao_series(&config.ao(seed)).expect("validated");
    let mse = replicate(
        &config.plan,
        &FIG1_ESTIMATORS,
        &[config.theta],
        workers,
        generate,
        |series| config.estimators(series),
    )?;
    let series = generate(config.plan.seed(0));
    let trace = FIG1_ESTIMATORS
        .iter()
        .map(|s| s.to_string())
        .zip(config.estimators(&series)?)
        .collect();
    Ok(Fig1Output { mse, trace })
}

/// Monte Carlo study of `sqrt(T)(theta_T - theta)` for the normal-location
/// likelihood recursion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormalityPlan {
    pub sigma: f64,
    pub theta: f64,
    pub theta0: f64,
    pub horizon: usize,
    pub replications: usize,
    pub base_seed: u64,
}

impl Default for NormalityPlan {
    fn default() -> Self {
        Self {
            sigma: 1.0,
            theta: 0.0,
            theta0: 0.0,
            horizon: 500,
            replications: 2000,
            base_seed: DEFAULT_SEED,
        }
    }
}

pub fn normality_experiment(plan: &NormalityPlan, workers: usize) -> Result<NormalityReport> {
    let model = Arc::new(NormalLocation::new(plan.sigma)?);
    if plan.horizon == 0 {
        return Err(Error::EmptySeries);
    }
    let dyn_model: Arc<dyn ConditionalModel> = model.clone();
    let psi = ScoreFunction::new(dyn_model.clone());
    let gamma = fisher_normalizer(dyn_model);
    let root_t = (plan.horizon as f64).sqrt();
    let outcomes = parallel_map(workers, plan.replications, |r| {
        let mut rng = rng_from_seed(mix_seed(plan.base_seed, r as u64));
        let series = simulate_iid(model.as_ref(), &[plan.theta], plan.horizon, &mut rng);
        Recursion::new(&psi, &gamma)?
            .run(&[plan.theta0], &series)
            .map(|traj| vec![root_t * (traj.last_theta()[0] - plan.theta)])
    })?;
    let failed = outcomes.iter().filter(|o| o.is_err()).count();
    check_failures(failed, plan.replications)?;
    let samples: Vec<Vec<f64>> = outcomes.into_iter().filter_map(|o| o.ok()).collect();
    let mut report = normality_check(&samples, &Matrix::scalar(plan.sigma * plan.sigma))?;
    report.failed_replications = failed;
    Ok(report)
}

/// Monte Carlo study of `|sqrt(t)(theta_t - theta*_t)|` for the
/// normal-location likelihood recursion started from `Gamma_0 = ridge`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearityPlan {
    pub sigma: f64,
    pub theta: f64,
    pub theta0: f64,
    pub ridge: f64,
    pub early: usize,
    pub late: usize,
    pub replications: usize,
    pub base_seed: u64,
}

impl Default for LinearityPlan {
    fn default() -> Self {
        Self {
            sigma: 1.0,
            theta: 0.6,
            theta0: 0.0,
            ridge: 1.0,
            early: 100,
            late: 1000,
            replications: 500,
            base_seed: DEFAULT_SEED,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub median: f64,
    pub p90: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearityReport {
    pub early: Quantiles,
    pub late: Quantiles,
    pub failed_replications: usize,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn quantiles(mut values: Vec<f64>) -> Quantiles {
    values.sort_by(f64::total_cmp);
    Quantiles {
        median: quantile(&values, 0.5),
        p90: quantile(&values, 0.9),
    }
}

pub fn linearity_experiment(plan: &LinearityPlan, workers: usize) -> Result<LinearityReport> {
    if !(1 <= plan.early && plan.early < plan.late) {
        return Err(Error::PreconditionViolated(format!(
            "need 1 <= early < late, got {} and {}",
            plan.early, plan.late
        )));
    }
    let model = Arc::new(NormalLocation::new(plan.sigma)?);
    let dyn_model: Arc<dyn ConditionalModel> = model.clone();
    let psi = ScoreFunction::new(dyn_model.clone());
    let gamma = tuned(Arc::new(fisher_normalizer(dyn_model)), Matrix::scalar(plan.ridge), vec![])?;
    let scaling = ScalingSequence::sqrt_t(1);
    let outcomes = parallel_map(workers, plan.replications, |r| -> Result<(f64, f64)> {
        let mut rng = rng_from_seed(mix_seed(plan.base_seed, r as u64));
        let series = simulate_iid(model.as_ref(), &[plan.theta], plan.late, &mut rng);
        let traj = Recursion::new(&psi, &gamma)?.run(&[plan.theta0], &series)?;
        let star = linear_statistic(&[plan.theta], &psi, &gamma, &series, 0)?;
        let residual = linearity_residual(&traj, &star, &scaling, &series, 0)?;
        Ok((residual[plan.early - 1][0].abs(), residual[plan.late - 1][0].abs()))
    })?;
    let failed = outcomes.iter().filter(|o| o.is_err()).count();
    check_failures(failed, plan.replications)?;
    let (early, late): (Vec<f64>, Vec<f64>) = outcomes.into_iter().filter_map(|o| o.ok()).unzip();
    Ok(LinearityReport {
        early: quantiles(early),
        late: quantiles(late),
        failed_replications: failed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::Record;
    use crate::models::ar_simulate;

    #[test]
    fn clean_ao_equals_ar_path() {
        let config = AoConfig {
            eps: 0.0,
            ..AoConfig::default()
        };
        let ao = ao_series(&config).unwrap();
        let model = ArModel::new(vec![0.6], Innovation::Gaussian { sigma: 1.0 }).unwrap();
        let ar = ar_simulate(&model, config.n, config.burn_in, &mut rng_stream(config.seed, 0));
        assert_eq!(ao, ar);
    }

    #[test]
    fn fully_contaminated_variance() {
        let config = AoConfig {
            theta: 0.0,
            eps: 1.0,
            n: 100_000,
            burn_in: 0,
            ..AoConfig::default()
        };
        let x = ao_series(&config).unwrap();
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (x.len() - 1) as f64;
        assert!((var / 10.0 - 1.0).abs() < 0.03, "{var}");
    }

    #[test]
    fn ao_is_deterministic() {
        let config = AoConfig::default();
        assert_eq!(ao_series(&config).unwrap(), ao_series(&config).unwrap());
        assert_eq!(ao_series(&config).unwrap().len(), 230);
    }

    #[test]
    fn invalid_ao_rejected() {
        assert!(ao_series(&AoConfig { eps: 1.5, ..AoConfig::default() }).is_err());
        assert!(ao_series(&AoConfig { sigma2: 0.0, ..AoConfig::default() }).is_err());
    }

    fn truth_stub(theta: f64, n: usize) -> Trajectory {
        let mut traj = Trajectory::new(vec![theta]);
        for t in 1..=n {
            traj.records.push(Record {
                t,
                theta: vec![theta],
                gamma: Matrix::scalar(t as f64),
            });
        }
        traj
    }

    fn small_plan(replications: usize) -> ReplicationPlan {
        ReplicationPlan {
            replications,
            n: 20,
            ..ReplicationPlan::default()
        }
    }

    #[test]
    fn truth_stub_has_zero_mse() {
        let plan = small_plan(1);
        let table = replicate(&plan, &["truth"], &[0.6], 1, |_| vec![], |_| Ok(vec![truth_stub(0.6, 20)]))
            .unwrap();
        assert!(table.mse[0].iter().all(|v| *v == 0.0));
        assert_eq!(table.times.first(), Some(&5));
        assert_eq!(table.times.last(), Some(&20));
    }

    #[test]
    fn stub_against_mean_estimator() {
        let plan = small_plan(10);
        let generate = |seed: u64| {
            let mut rng = rng_from_seed(seed);
            (0..20).map(|_| StandardNormal.sample(&mut rng)).collect::<Vec<f64>>()
        };
        let table = replicate(&plan, &["truth", "mean"], &[0.0], 2, generate, |x| {
            let psi = crate::functions::LocationResidual;
            let gamma = crate::functions::StepNormalizer::unit(1);
            Ok(vec![truth_stub(0.0, 20), crate::engine::run(&psi, &gamma, &[0.0], x)?])
        })
        .unwrap();
        assert!(table.mse[0].iter().all(|v| *v == 0.0));
        assert!(table.mse[1].iter().all(|v| *v > 0.0));
    }

    #[test]
    fn worker_count_does_not_change_result() {
        let plan = small_plan(23);
        let generate = |seed: u64| {
            let mut rng = rng_from_seed(seed);
            (0..20).map(|_| StandardNormal.sample(&mut rng)).collect::<Vec<f64>>()
        };
        let experiment = |x: &[f64]| {
            let psi = crate::functions::LocationResidual;
            let gamma = crate::functions::StepNormalizer::unit(1);
            Ok(vec![crate::engine::run(&psi, &gamma, &[0.0], x)?])
        };
        let a = replicate(&plan, &["mean"], &[0.0], 1, generate, experiment).unwrap();
        let b = replicate(&plan, &["mean"], &[0.0], 7, generate, experiment).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn failures_counted_and_thresholded() {
        let plan = small_plan(40);
        let flaky = |seed: u64| vec![(seed % 40) as f64];
        let experiment = |x: &[f64]| {
            if x[0] < 2.0 {
                Err(Error::NonFiniteUpdate)
            } else {
                Ok(vec![truth_stub(0.0, 20)])
            }
        };
        // seeds are hashed, so count the failing ones directly
        let expected = (0..40).filter(|r| (plan.seed(*r) % 40) < 2).count();
        let outcome = replicate(&plan, &["s"], &[0.0], 1, flaky, experiment);
        if expected * 20 > 40 {
            assert!(matches!(outcome, Err(Error::ReplicationFailures { .. })));
        } else {
            assert_eq!(outcome.unwrap().failures, expected);
        }
        let always = replicate(&plan, &["s"], &[0.0], 1, flaky, |_| Err(Error::NonFiniteUpdate));
        assert!(matches!(always, Err(Error::ReplicationFailures { failed: 40, total: 40 })));
    }

    #[test]
    fn prefix_fit_on_exact_ar() {
        let mut x = vec![1.0];
        for _ in 0..29 {
            x.push(0.5 * x.last().unwrap() + 0.0);
        }
        x[3] += 0.25;
        let fit = prefix_fit(&x).unwrap();
        assert!(fit.theta0 > 0.4 && fit.theta0 < 0.6);
        assert!(fit.scales.s_x > 0.0 && fit.scales.s_r > 0.0);
    }

    #[test]
    fn fig1_single_run_shapes() {
        let config = Fig1Config {
            plan: ReplicationPlan {
                replications: 4,
                ..ReplicationPlan::default()
            },
            ..Fig1Config::default()
        };
        let out = run_fig1(&config, 2).unwrap();
        assert_eq!(out.mse.times.len(), 196);
        assert_eq!(out.trace.len(), 3);
        assert!(out.trace.iter().all(|(_, t)| t.len() == 200));
    }

    #[test]
    fn quantile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.5), 2.5);
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
    }
}
