//! Acceptance criteria, one line of output each.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

use recest::cli::cmd_experiment_fig1;
use recest::diagnostics::{condition_e_probe, j_psi, linearity_residual, r_field, ScalingSequence};
use recest::engine::{linear_statistic, Recursion};
use recest::linalg::Matrix;
use recest::models::{
    caef_run, galton_watson_poisson, linear_closed_form, linear_run, CaefFamily, CaefNormalizer,
    ConditionalModel, IidModel, LinearProcedureSpec, NormalLocation, ScoreFunction,
};
use recest::normalizers::fisher_normalizer;
use recest::rng::{mix_seed, rng_from_seed};
use recest::robust::{c_g_hampel, c_g_hampel_normal, c_g_huber, c_g_huber_normal, normal_density};
use recest::simulator::{
    linearity_experiment, normality_experiment, run_fig1, simulate_chain, simulate_iid, Fig1Config,
    LinearityPlan, NormalityPlan,
};
use statrs::function::erf::erf;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome, Duration);

fn workers() -> usize {
    std::thread::available_parallelism().map_or(4, |n| n.get())
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Dense Gaussian elimination with partial pivoting.
fn oracle_solve(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a.iter().zip(b).map(|(r, v)| r.iter().copied().chain([*v]).collect()).collect();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs())).unwrap();
        m.swap(c, p);
        for r in c + 1..n {
            let f = m[r][c] / m[c][c];
            let pivot = m[c].clone();
            for (v, p) in m[r][c..].iter_mut().zip(&pivot[c..]) {
                *v -= f * p;
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| m[r][k] * x[k]).sum();
        x[r] = (m[r][n] - s) / m[r][r];
    }
    x
}

fn lags(past: &[f64], m: usize) -> Vec<f64> {
    (1..=m).map(|k| past[past.len() - k]).collect()
}

/// Least-squares-type affine procedure of order `m` with `Gamma_0 = ridge I`
/// and `gamma_t = z z^T + extra I`.
fn ls_spec(m: usize, ridge: f64, extra: f64) -> LinearProcedureSpec {
    LinearProcedureSpec::matched(
        m,
        move |_, x, past| lags(past, m).iter().map(|z| z * x).collect(),
        move |_, past| {
            let z = lags(past, m);
            let mut g = Matrix::outer(&z, &z);
            for i in 0..m {
                g[(i, i)] += extra;
            }
            g
        },
        Matrix::scaled_identity(m, ridge),
    )
    .with_presample(m)
}

fn noise(seed: u64, n: usize, scale: f64) -> Vec<f64> {
    let mut rng = rng_from_seed(seed);
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            scale * z
        })
        .collect()
}

fn criterion_1() -> Outcome {
    let model: Arc<dyn ConditionalModel> = Arc::new(NormalLocation::new(1.0).unwrap());
    let psi = ScoreFunction::new(model.clone());
    let gamma = fisher_normalizer(model);
    let recursion = Recursion::new(&psi, &gamma).unwrap();
    let mut worst = 0.0_f64;
    for r in 0..100 {
        let x: Vec<f64> = noise(mix_seed(11, r), 1000, 3.0).iter().map(|v| v + 2.0).collect();
        let traj = recursion.run(&[0.0], &x).unwrap();
        let mut sum = 0.0;
        for (k, rec) in traj.records.iter().enumerate() {
            sum += x[k];
            worst = worst.max((rec.theta[0] - sum / (k + 1) as f64).abs());
        }
    }
    check(worst <= 1e-12, format!("max |theta_t - mean| = {worst:.3e}"))
}

fn criterion_2() -> Outcome {
    let mut worst = 0.0_f64;
    for m in 1..=3usize {
        let mut runner = TestRunner::new(Config {
            cases: 50,
            failure_persistence: None,
            rng_seed: proptest::test_runner::RngSeed::Fixed(m as u64),
            ..Config::default()
        });
        let strategy = (any::<u64>(), 0.1f64..10.0, prop::collection::vec(-1.0f64..1.0, m));
        let result = runner.run(&strategy, |(seed, scale, theta0)| {
            let x = noise(seed, 1000 + m, scale);
            let spec = ls_spec(m, 1.0, 0.0);
            let run = linear_run(&spec, &theta0, &x).unwrap();
            let closed = linear_closed_form(&spec, &theta0, &x).unwrap();
            let mut gamma: Vec<Vec<f64>> = (0..m).map(|i| (0..m).map(|j| f64::from(i == j)).collect()).collect();
            let mut num = theta0.clone();
            let mut local = 0.0_f64;
            for (k, i) in (m..x.len()).enumerate() {
                let z = lags(&x[..i], m);
                for a in 0..m {
                    num[a] += z[a] * x[i];
                    for b in 0..m {
                        gamma[a][b] += z[a] * z[b];
                    }
                }
                let oracle = oracle_solve(&gamma, &num);
                let scale = oracle.iter().fold(0.0_f64, |s, v| s.max(v.abs())).max(1e-300);
                for (a, o) in oracle.iter().enumerate() {
                    local = local.max((run.records[k].theta[a] - o).abs() / scale);
                    local = local.max((closed.records[k].theta[a] - o).abs() / scale);
                }
            }
            prop_assert!(local <= 1e-10, "m = {m}: relative error {local:e}");
            Ok(())
        });
        result.map_err(|e| e.to_string())?;
        // Re-run one case outside the runner to report the error level.
        let x = noise(m as u64, 1000 + m, 1.0);
        let spec = ls_spec(m, 1.0, 0.0);
        let a = linear_run(&spec, &vec![0.5; m], &x).unwrap();
        let b = linear_closed_form(&spec, &vec![0.5; m], &x).unwrap();
        for (ra, rb) in a.records.iter().zip(&b.records) {
            for (u, v) in ra.theta.iter().zip(&rb.theta) {
                worst = worst.max((u - v).abs() / v.abs().max(1e-300));
            }
        }
    }
    check(worst <= 1e-10, format!("m = 1, 2, 3 x 50 cases; sample relative error {worst:.3e}"))
}

fn criterion_3() -> Outcome {
    let mut worst = 0.0_f64;
    for m in 1..=3usize {
        let spec = ls_spec(m, 0.0, 0.1);
        let x = noise(100 + m as u64, 1000 + m, 2.0);
        let psi = spec.estimating_function();
        let gamma = spec.normalizer();
        let theta0 = vec![-0.7; m];
        let truth = vec![0.3; m];
        let traj = linear_run(&spec, &theta0, &x).unwrap();
        let star = linear_statistic(&truth, &psi, gamma.as_ref(), &x, m).unwrap();
        let residual = linearity_residual(&traj, &star, &ScalingSequence::sqrt_t(m), &x, m).unwrap();
        for r in residual.iter().flatten() {
            worst = worst.max(r.abs());
        }
    }
    check(worst <= 1e-10, format!("max |r_t| = {worst:.3e}"))
}

fn criterion_4() -> Outcome {
    let phi = |z: f64| 0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2));
    let huber = c_g_huber_normal(1.8).unwrap();
    let d1 = (huber - (2.0 * phi(1.8) - 1.0)).abs();
    let huber_q = c_g_huber(1.8, 1.0, &normal_density(1.0)).unwrap();
    let d2 = (huber_q - huber).abs();
    let hampel = c_g_hampel_normal(1.8, 4.0).unwrap();
    let r2 = std::f64::consts::SQRT_2;
    let oracle = erf(1.8 / r2) - 1.8 / (4.0 - 1.8) * (erf(4.0 / r2) - erf(1.8 / r2));
    let d3 = (hampel - oracle).abs();
    let hampel_q = c_g_hampel(1.8, 4.0, 1.0, &normal_density(1.0)).unwrap();
    let d4 = (hampel_q - hampel).abs();
    // Scale invariance for N(0, s^2) residuals.
    let d5 = (c_g_huber(1.8, 2.5, &normal_density(2.5)).unwrap() - huber).abs();
    let worst = d1.max(d2).max(d3).max(d4).max(d5);
    check(
        worst <= 1e-8,
        format!("huber {huber:.12}, hampel {hampel:.12}, max deviation {worst:.3e}"),
    )
}

fn criterion_5() -> Outcome {
    let plan = NormalityPlan::default();
    let report = normality_experiment(&plan, workers()).map_err(|e| e.to_string())?;
    let var = report.sample_cov[0][0];
    let mean = report.sample_mean[0];
    let ks = report.ks_statistic[0];
    let crit = 1.63 / (report.n_samples as f64).sqrt();
    check(
        (0.9..=1.1).contains(&var) && (-0.05..=0.05).contains(&mean) && ks < crit,
        format!("var {var:.4}, mean {mean:.4}, KS {ks:.4} < {crit:.4}, n = {}", report.n_samples),
    )
}

fn criterion_6() -> Outcome {
    let report = linearity_experiment(&LinearityPlan::default(), workers()).map_err(|e| e.to_string())?;
    let (e, l) = (report.early, report.late);
    check(
        l.median < e.median && l.p90 < e.p90,
        format!(
            "t=100 median {:.4e} p90 {:.4e}; t=1000 median {:.4e} p90 {:.4e}",
            e.median, e.p90, l.median, l.p90
        ),
    )
}

fn criterion_7() -> Outcome {
    let config = Fig1Config::default();
    let out = run_fig1(&config, workers()).map_err(|e| e.to_string())?;
    let get = |id: &str| out.mse.get(id, 200).unwrap();
    let (ls, hu, ha) = (get("ls"), get("huber_gm"), get("hampel_gm"));
    check(
        hu < ls && ha < ls,
        format!("MSE at n=200: ls {ls:.5}, huber_gm {hu:.5}, hampel_gm {ha:.5}"),
    )
}

fn criterion_8() -> Outcome {
    let family: Arc<dyn CaefFamily> = Arc::new(galton_watson_poisson());
    let lambda = 1.5_f64.ln();
    let target = 1.0 / family.gamma_ddot(lambda);
    let normalizer = CaefNormalizer::new(family.clone(), 0.0);
    let scaling = ScalingSequence::h_sqrt(family.clone(), 0.0);
    let mut close = 0;
    let mut probe_dev = 0.0_f64;
    for r in 0..200u64 {
        let mut rng = rng_from_seed(mix_seed(8, r));
        let x = simulate_chain(family.as_ref(), lambda, 10.0, 500, &mut rng);
        if let Ok(run) = caef_run(family.clone(), 0.0, &x, 0.0) {
            if (run.trajectory.last_theta()[0] - lambda).abs() < 0.1 {
                close += 1;
            }
        }
        let probe = condition_e_probe(&normalizer, &scaling, &[lambda], &x, 1).map_err(|e| e.to_string())?;
        for m in &probe.matrices {
            probe_dev = probe_dev.max((m[(0, 0)] - target).abs());
        }
    }
    check(
        close >= 180 && probe_dev <= 1e-8,
        format!("{close}/200 within 0.1; condition (E) max deviation from 1/gamma'' {probe_dev:.3e}"),
    )
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

fn criterion_9() -> Outcome {
    let mut worst_mean = 0.0_f64;
    let mut worst_j = 0.0_f64;
    let mut worst_r = 0.0_f64;
    for (sigma, theta) in [(1.0, 0.0), (0.5, 1.3), (3.0, -2.0)] {
        let model = Arc::new(NormalLocation::new(sigma).unwrap());
        let dyn_model: Arc<dyn ConditionalModel> = model.clone();
        let psi = ScoreFunction::new(dyn_model.clone());
        let gamma = fisher_normalizer(dyn_model);
        let (lo, hi) = (theta - 12.0 * sigma, theta + 12.0 * sigma);
        let mean = simpson(
            |x| model.score(&[theta], x, &[])[0] * model.density(&[theta], x, &[]),
            lo,
            hi,
            20_000,
        );
        worst_mean = worst_mean.max(mean.abs());
        let j = j_psi(model.as_ref(), &psi, &[theta]).map_err(|e| e.to_string())?;
        let i = model.fisher(&[theta]);
        worst_j = worst_j.max((j[(0, 0)] - i[(0, 0)]).abs());
        let past: Vec<f64> = simulate_iid(model.as_ref(), &[theta], 4, &mut rand_chacha::ChaCha8Rng::seed_from_u64(3));
        for t in 1..=5 {
            let r = r_field(model.as_ref(), &psi, &gamma, t, &[theta], &[0.0], &past[..t - 1])
                .map_err(|e| e.to_string())?;
            worst_r = worst_r.max(r[0].abs());
        }
    }
    check(
        worst_mean <= 1e-6 && worst_j <= 1e-6 && worst_r <= 1e-8,
        format!("|int l f| {worst_mean:.3e}, |j - i| {worst_j:.3e}, |R_t(theta, 0)| {worst_r:.3e}"),
    )
}

fn criterion_10() -> Outcome {
    let config = Fig1Config::default();
    let dir = tempfile::TempDir::new().map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for (k, w) in [1, 1, 8].into_iter().enumerate() {
        let out = dir.path().join(format!("run{k}"));
        let files = cmd_experiment_fig1(&config, &out, w).map_err(|e| e.to_string())?;
        let bytes: Vec<Vec<u8>> = files.iter().map(|f| std::fs::read(f).unwrap()).collect();
        outputs.push(bytes);
    }
    let identical = outputs[0] == outputs[1] && outputs[0] == outputs[2];
    let sizes: Vec<usize> = outputs[0].iter().map(Vec::len).collect();
    check(identical, format!("3 files {sizes:?} bytes; rerun and workers 1 vs 8 identical: {identical}"))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("running mean", criterion_1, Duration::from_secs(1)),
        ("linear recursion vs closed form", criterion_2, Duration::from_secs(5)),
        ("linearity residual for linear psi", criterion_3, Duration::from_secs(1)),
        ("C_g closed forms", criterion_4, Duration::from_secs(1)),
        ("normal-location asymptotic normality", criterion_5, Duration::from_secs(30)),
        ("linearity residual shrinks", criterion_6, Duration::from_secs(60)),
        ("GM beats LS under AO", criterion_7, Duration::from_secs(120)),
        ("Galton-Watson consistency and condition (E)", criterion_8, Duration::from_secs(30)),
        ("IID score and R_t identities", criterion_9, Duration::from_secs(5)),
        ("fig1 determinism", criterion_10, Duration::from_secs(240)),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (k, (name, f, budget)) in criteria.iter().enumerate() {
        let id = format!("criterion_{}", k + 1);
        if !filter.is_empty() && !filter.iter().any(|p| id.contains(p.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into()))
        });
        let elapsed = start.elapsed();
        let in_time = elapsed <= *budget;
        let (pass, detail) = match outcome {
            Ok(d) => (in_time, d),
            Err(d) => (false, d),
        };
        println!(
            "{id} {} [{name}] {detail}; {:.2}s (limit {}s)",
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
        if !pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
