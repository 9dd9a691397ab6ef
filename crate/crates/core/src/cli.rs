//! The `recest` command-line front end.
//!
//! Exit codes: 0 success, 2 configuration or input error, 3 I/O error,
//! 4 numerical failure, 5 too many failed replications.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::config::{build_estimator, BuiltEstimator, ExperimentConfig, ModelConfig};
use crate::diagnostics::{condition_e_probe, j_psi, linearity_residual, NormalityReport};
use crate::engine::{linear_statistic, Normalizer, Record, Recursion, Trajectory};
use crate::error::Error;
use crate::linalg::Matrix;
use crate::models::{ar_simulate, galton_watson_poisson, ArModel, NormalLocation};
use crate::normalizers::bprime_normalizer;
use crate::rng::{mix_seed, rng_from_seed};
use crate::simulator::{
    ao_series, normality_experiment, parallel_map, run_fig1, simulate_chain, simulate_iid,
    AoConfig, Fig1Config, Fig1Output, NormalityPlan,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;
pub const EXIT_REPLICATIONS: i32 = 5;

#[derive(Debug, Parser)]
#[command(name = "recest", version, about = "Recursive parameter estimation toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Data file with one observation per row (`t,x` or a single column).
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for replicated experiments.
    #[arg(long, global = true, default_value_t = 1)]
    pub workers: usize,
    /// Base seed; overrides the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Simulate a series from the model block.
    Simulate,
    /// Run the configured estimator over a data file.
    Estimate,
    /// Residual, condition (E) and normality probes.
    Diagnose,
    /// Least squares against Huber and Hampel GM recursions on AO data.
    #[command(name = "experiment-fig1")]
    ExperimentFig1,
    /// Normal-location likelihood recursion, scaled error distribution.
    #[command(name = "experiment-normality")]
    ExperimentNormality,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("replication failures: {0}")]
    Replications(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Io(_) => EXIT_IO,
            CliError::Numerical(_) => EXIT_NUMERICAL,
            CliError::Replications(_) => EXIT_REPLICATIONS,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        if matches!(e.root(), Error::ReplicationFailures { .. }) {
            CliError::Replications(e.to_string())
        } else if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Config(e.to_string())
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parses `args` and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs one command and returns the files written.
pub fn run(cli: &Cli) -> CliResult<Vec<PathBuf>> {
    if cli.workers == 0 {
        return Err(CliError::Config("--workers must be >= 1".into()));
    }
    match cli.command {
        Command::Simulate => {
            let config = load_config(cli)?;
            cmd_simulate(&config, &out_dir(cli, Some(&config)))
        }
        Command::Estimate => {
            let config = load_config(cli)?;
            let data = load_data(cli)?;
            cmd_estimate(&config, &data, &out_dir(cli, Some(&config)))
        }
        Command::Diagnose => {
            let config = load_config(cli)?;
            let data = load_data(cli)?;
            cmd_diagnose(&config, &data, &out_dir(cli, Some(&config)), cli.workers)
        }
        Command::ExperimentFig1 => {
            let mut config: Fig1Config = load_optional(cli)?;
            if let Some(seed) = cli.seed {
                config.plan.base_seed = seed;
            }
            cmd_experiment_fig1(&config, &out_dir(cli, None), cli.workers)
        }
        Command::ExperimentNormality => {
            let mut plan: NormalityPlan = load_optional(cli)?;
            if let Some(seed) = cli.seed {
                plan.base_seed = seed;
            }
            cmd_experiment_normality(&plan, &out_dir(cli, None), cli.workers)
        }
    }
}

fn out_dir(cli: &Cli, config: Option<&ExperimentConfig>) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| config.and_then(|c| c.output.dir.clone()).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Reads, parses and validates the experiment configuration.
pub fn load_config(cli: &Cli) -> CliResult<ExperimentConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config is required".into()))?;
    let mut config = parse_config(&read_text(path)?)?;
    if let Some(seed) = cli.seed {
        config.plan.base_seed = seed;
    }
    Ok(config)
}

pub fn parse_config(text: &str) -> CliResult<ExperimentConfig> {
    let config = ExperimentConfig::from_json(text).map_err(|e| CliError::Config(e.to_string()))?;
    config.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(config)
}

fn load_optional<T: serde::de::DeserializeOwned + Default>(cli: &Cli) -> CliResult<T> {
    match &cli.config {
        None => Ok(T::default()),
        Some(path) => serde_json::from_str(&read_text(path)?).map_err(|e| CliError::Config(e.to_string())),
    }
}

fn load_data(cli: &Cli) -> CliResult<Vec<f64>> {
    let path = cli
        .data
        .as_ref()
        .ok_or_else(|| CliError::Config("--data is required".into()))?;
    parse_series(&read_text(path)?)
}

/// Parses a series file: either a `t,x` CSV with header or one number per
/// line.
pub fn parse_series(text: &str) -> CliResult<Vec<f64>> {
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty()).peekable();
    let mut column = None;
    if let Some(first) = lines.peek() {
        let fields: Vec<&str> = first.split(',').map(str::trim).collect();
        if fields.iter().any(|f| f.parse::<f64>().is_err()) {
            column = Some(
                fields
                    .iter()
                    .position(|f| *f == "x")
                    .ok_or_else(|| CliError::Config("data header has no `x` column".into()))?,
            );
            lines.next();
        }
    }
    let mut out = Vec::new();
    for (k, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let field = match column {
            Some(c) => fields.get(c).copied(),
            None => fields.last().copied(),
        }
        .ok_or_else(|| CliError::Config(format!("data row {} is too short", k + 1)))?;
        let v: f64 = field
            .parse()
            .map_err(|_| CliError::Config(format!("data row {}: cannot parse `{field}`", k + 1)))?;
        if !v.is_finite() {
            return Err(CliError::Config(format!("data row {} is not finite", k + 1)));
        }
        out.push(v);
    }
    if out.is_empty() {
        return Err(CliError::Config("data file has no observations".into()));
    }
    Ok(out)
}

/// Round-trip formatting with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_file(dir: &Path, name: &str, contents: &str) -> CliResult<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(path)
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> CliResult<PathBuf> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    text.push('\n');
    write_file(dir, name, &text)
}

pub fn series_csv(x: &[f64]) -> String {
    let mut s = String::from("t,x\n");
    for (i, v) in x.iter().enumerate() {
        let _ = writeln!(s, "{},{}", i + 1, fmt_f64(*v));
    }
    s
}

pub fn trajectory_csv(records: &[Record]) -> String {
    let mut s = String::from("t,component,theta_hat\n");
    for r in records {
        for (c, v) in r.theta.iter().enumerate() {
            let _ = writeln!(s, "{},{},{}", r.t, c, fmt_f64(*v));
        }
    }
    s
}

/// Simulated series of `plan.prefix + plan.n` observations.
pub fn simulate_series(config: &ExperimentConfig) -> crate::Result<Vec<f64>> {
    let plan = &config.plan;
    let len = plan.prefix + plan.n;
    let seed = plan.base_seed;
    Ok(match &config.model {
        ModelConfig::NormalLocation { sigma, theta } => {
            simulate_iid(&NormalLocation::new(*sigma)?, &[*theta], len, &mut rng_from_seed(seed))
        }
        ModelConfig::GwPoisson { mean, x0 } => simulate_chain(
            &galton_watson_poisson(),
            mean.ln(),
            *x0,
            len.saturating_sub(1),
            &mut rng_from_seed(seed),
        ),
        ModelConfig::Ar { theta, innovation } => ar_simulate(
            &ArModel::new(theta.clone(), *innovation)?,
            len,
            plan.burn_in,
            &mut rng_from_seed(seed),
        ),
        ModelConfig::Ao { theta, eps, sigma2 } => ao_series(&AoConfig {
            theta: *theta,
            eps: *eps,
            sigma2: *sigma2,
            n: len,
            burn_in: plan.burn_in,
            seed,
        })?,
    })
}

pub fn cmd_simulate(config: &ExperimentConfig, out: &Path) -> CliResult<Vec<PathBuf>> {
    let series = simulate_series(config)?;
    let sidecar = json!({ "config": config, "seed": config.plan.base_seed });
    Ok(vec![
        write_file(out, "series.csv", &series_csv(&series))?,
        write_json(out, "series.json", &sidecar)?,
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepFailure {
    pub step: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FinalState {
    pub t: usize,
    pub theta_hat: Vec<f64>,
    pub gamma: Vec<Vec<f64>>,
    pub step_failures: Vec<StepFailure>,
}

/// Runs `built` over `data`, stopping at the first failed step.
pub fn run_partial(built: &BuiltEstimator, data: &[f64]) -> CliResult<(Trajectory, Option<(usize, Error)>)> {
    if data.len() <= built.presample {
        return Err(CliError::Config(format!(
            "need more than {} observations, got {}",
            built.presample,
            data.len()
        )));
    }
    let recursion = Recursion::new(built.psi.as_ref(), built.gamma.as_ref())?.with_mode(built.mode);
    let mut state = recursion.start(&built.theta0)?;
    let mut traj = Trajectory::new(built.theta0.clone());
    for i in built.presample..data.len() {
        if let Err(e) = recursion.step(&mut state, data[i], &data[..i]) {
            return Ok((traj, Some((state.t + 1, e))));
        }
        traj.records.push(Record {
            t: state.t,
            theta: state.theta.clone(),
            gamma: state.gamma.clone(),
        });
    }
    Ok((traj, None))
}

pub fn cmd_estimate(config: &ExperimentConfig, data: &[f64], out: &Path) -> CliResult<Vec<PathBuf>> {
    let built = build_estimator(config, data)?;
    let (traj, failure) = run_partial(&built, data)?;
    let gamma = traj
        .records
        .last()
        .map(|r| r.gamma.rows())
        .unwrap_or_else(|| built.gamma.initial().rows());
    let state = FinalState {
        t: traj.len(),
        theta_hat: traj.last_theta().to_vec(),
        gamma,
        step_failures: failure
            .iter()
            .map(|(step, e)| StepFailure {
                step: *step,
                error: e.to_string(),
            })
            .collect(),
    };
    let files = vec![
        write_file(out, "trajectory.csv", &trajectory_csv(&traj.records))?,
        write_json(out, "final_state.json", &state)?,
    ];
    match failure {
        Some((step, e)) => {
            let e = Error::StepFailed {
                step,
                source: Box::new(e),
            };
            Err(if e.is_numerical() {
                CliError::Numerical(e.to_string())
            } else {
                CliError::Config(e.to_string())
            })
        }
        None => Ok(files),
    }
}

pub fn cmd_diagnose(
    config: &ExperimentConfig,
    data: &[f64],
    out: &Path,
    workers: usize,
) -> CliResult<Vec<PathBuf>> {
    let diag = config
        .diagnostics
        .as_ref()
        .ok_or_else(|| CliError::Config("missing field `diagnostics`".into()))?;
    let probes = diag.probes;
    if !diag.enabled || !(probes.linearity || probes.condition_e || probes.normality) {
        return Ok(Vec::new());
    }
    let theta_true = diag
        .theta_true
        .clone()
        .ok_or_else(|| CliError::Config("missing field `diagnostics.theta_true`".into()))?;
    if theta_true.len() != config.model.dim() {
        return Err(CliError::Config(format!(
            "diagnostics.theta_true has {} components, model has {}",
            theta_true.len(),
            config.model.dim()
        )));
    }
    let scaling = config.scaling(diag.scaling)?;
    let built = build_estimator(config, data)?;
    let mut files = Vec::new();
    let mut summary = serde_json::Map::new();
    summary.insert("scaling".into(), json!(scaling.tag()));

    if probes.linearity {
        let traj = Recursion::new(built.psi.as_ref(), built.gamma.as_ref())?
            .with_mode(built.mode)
            .run_with_presample(&built.theta0, data, built.presample)?;
        let star = linear_statistic(&theta_true, built.psi.as_ref(), built.gamma.as_ref(), data, built.presample)?;
        let residual = linearity_residual(&traj, &star, &scaling, data, built.presample)?;
        let mut csv = String::from("t,component,value\n");
        let mut max_abs = 0.0_f64;
        for (r, v) in traj.records.iter().zip(&residual) {
            for (c, x) in v.iter().enumerate() {
                max_abs = max_abs.max(x.abs());
                let _ = writeln!(csv, "{},{},{}", r.t, c, fmt_f64(*x));
            }
        }
        summary.insert("residual_max_abs".into(), json!(max_abs));
        files.push(write_file(out, "residuals.csv", &csv)?);
    }
    if probes.condition_e {
        let probe = condition_e_probe(built.gamma.as_ref(), &scaling, &theta_true, data, built.presample)?;
        let mut csv = String::from("t,row,col,value\n");
        for (k, m) in probe.matrices.iter().enumerate() {
            for i in 0..m.dim() {
                for j in 0..m.dim() {
                    let _ = writeln!(csv, "{},{},{},{}", k + 1, i, j, fmt_f64(m[(i, j)]));
                }
            }
        }
        summary.insert("condition_e_tail_deviation".into(), json!(probe.tail_deviation));
        files.push(write_file(out, "condition_e.csv", &csv)?);
    }
    if probes.normality {
        let report = diagnose_normality(config, &built, &theta_true, workers)?;
        files.push(write_json(out, "normality_report.json", &report)?);
    }
    files.push(write_json(out, "diagnostics.json", &summary)?);
    Ok(files)
}

/// Monte Carlo normality of `sqrt(n)(theta_n - theta)` for an i.i.d. model,
/// against `gamma^{-1} j_psi gamma^{-1}`.
fn diagnose_normality(
    config: &ExperimentConfig,
    built: &BuiltEstimator,
    theta_true: &[f64],
    workers: usize,
) -> CliResult<NormalityReport> {
    let ModelConfig::NormalLocation { sigma, .. } = config.model else {
        return Err(CliError::Config(
            "diagnostics.probes.normality needs model.id = normal_location".into(),
        ));
    };
    let model = NormalLocation::new(sigma)?.with_quadrature(config.quadrature);
    let est = config.estimator_or_default();
    let slope = bprime_normalizer(built.psi.clone(), built.model.clone().expect("iid model"), est.fd_step)?
        .increment(1, theta_true, &[])?[(0, 0)];
    let j = j_psi(&model, built.psi.as_ref(), theta_true)?[(0, 0)];
    let target = Matrix::scalar(j / (slope * slope));
    let n = config.plan.n;
    let root_n = (n as f64).sqrt();
    let outcomes = parallel_map(workers, config.plan.replications, |r| {
        let mut rng = rng_from_seed(mix_seed(config.plan.base_seed, r as u64));
        let series = simulate_iid(&model, theta_true, n, &mut rng);
        Recursion::new(built.psi.as_ref(), built.gamma.as_ref())?
            .with_mode(built.mode)
            .run(&built.theta0, &series)
            .map(|t| vec![root_n * (t.last_theta()[0] - theta_true[0])])
    })?;
    let failed = outcomes.iter().filter(|o| o.is_err()).count();
    if failed * 20 > config.plan.replications {
        return Err(CliError::Replications(format!(
            "{failed} of {} replications failed",
            config.plan.replications
        )));
    }
    let samples: Vec<Vec<f64>> = outcomes.into_iter().filter_map(|o| o.ok()).collect();
    let mut report = crate::diagnostics::normality_check(&samples, &target)?;
    report.failed_replications = failed;
    Ok(report)
}

pub fn mse_csv(out: &Fig1Output) -> String {
    let mut s = String::from("estimator_id,t,mse\n");
    for (id, row) in out.mse.estimators.iter().zip(&out.mse.mse) {
        for (t, v) in out.mse.times.iter().zip(row) {
            let _ = writeln!(s, "{id},{t},{}", fmt_f64(*v));
        }
    }
    s
}

pub fn trace_csv(out: &Fig1Output) -> String {
    let mut s = String::from("estimator_id,t,theta_hat\n");
    for (id, traj) in &out.trace {
        for r in &traj.records {
            let _ = writeln!(s, "{id},{},{}", r.t, fmt_f64(r.theta[0]));
        }
    }
    s
}

pub fn cmd_experiment_fig1(config: &Fig1Config, out: &Path, workers: usize) -> CliResult<Vec<PathBuf>> {
    let result = run_fig1(config, workers)?;
    let horizon = config.plan.n;
    let at_horizon: serde_json::Map<String, serde_json::Value> = result
        .mse
        .estimators
        .iter()
        .map(|id| (id.clone(), json!(result.mse.get(id, horizon))))
        .collect();
    let summary = json!({
        "config": config,
        "horizon": horizon,
        "mse_at_horizon": at_horizon,
        "replications": result.mse.replications,
        "failures": result.mse.failures,
    });
    Ok(vec![
        write_file(out, "fig1_mse.csv", &mse_csv(&result))?,
        write_file(out, "fig1_trace.csv", &trace_csv(&result))?,
        write_json(out, "fig1_summary.json", &summary)?,
    ])
}

pub fn cmd_experiment_normality(plan: &NormalityPlan, out: &Path, workers: usize) -> CliResult<Vec<PathBuf>> {
    let report = normality_experiment(plan, workers)?;
    Ok(vec![
        write_json(out, "normality_report.json", &report)?,
        write_json(out, "normality_config.json", plan)?,
    ])
}
