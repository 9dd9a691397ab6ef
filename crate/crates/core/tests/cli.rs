use std::fs;
use std::path::Path;

use recest::cli::{main_with_args, EXIT_CONFIG, EXIT_IO, EXIT_NUMERICAL, EXIT_OK};
use tempfile::TempDir;

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn run(args: &[&str]) -> i32 {
    main_with_args(std::iter::once("recest").chain(args.iter().copied()))
}

#[test]
fn simulate_ao_defaults_writes_230_rows() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "c.json", r#"{"model": {"id": "ao"}}"#);
    let out = dir.path().join("out");
    assert_eq!(run(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]), EXIT_OK);
    let csv = fs::read_to_string(out.join("series.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t,x"));
    assert_eq!(lines.count(), 230);
    let sidecar: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("series.json")).unwrap()).unwrap();
    assert_eq!(sidecar["seed"], 20_100_401);
    assert_eq!(sidecar["config"]["model"]["id"], "ao");
}

#[test]
fn seed_flag_overrides_config() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "c.json", r#"{"model": {"id": "ao"}, "plan": {"base_seed": 1}}"#);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(run(&["simulate", "--config", &cfg, "--out", a.to_str().unwrap(), "--seed", "2"]), 0);
    assert_eq!(run(&["simulate", "--config", &cfg, "--out", b.to_str().unwrap()]), 0);
    assert_ne!(fs::read(a.join("series.csv")).unwrap(), fs::read(b.join("series.csv")).unwrap());
    let sidecar: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.join("series.json")).unwrap()).unwrap();
    assert_eq!(sidecar["seed"], 2);
}

#[test]
fn estimate_running_mean() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "c.json", r#"{"model": {"id": "normal_location"}}"#);
    let data = write(dir.path(), "d.csv", "t,x\n1,2\n2,4\n3,6\n");
    let out = dir.path().join("out");
    assert_eq!(
        run(&["estimate", "--config", &cfg, "--data", &data, "--out", out.to_str().unwrap()]),
        EXIT_OK
    );
    let state: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("final_state.json")).unwrap()).unwrap();
    assert_eq!(state["theta_hat"][0].as_f64().unwrap(), 4.0);
    assert_eq!(state["t"], 3);
    assert_eq!(state["step_failures"].as_array().unwrap().len(), 0);
    let traj = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert_eq!(traj.lines().last().unwrap(), "3,0,4.0000000000000000e0");
}

#[test]
fn estimate_single_column_data() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "c.json", r#"{"model": {"id": "normal_location"}}"#);
    let data = write(dir.path(), "d.csv", "1\n3\n");
    let out = dir.path().join("out");
    assert_eq!(run(&["estimate", "--config", &cfg, "--data", &data, "--out", out.to_str().unwrap()]), 0);
}

#[test]
fn estimate_empty_data_is_config_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "c.json", r#"{"model": {"id": "normal_location"}}"#);
    let data = write(dir.path(), "d.csv", "");
    let header_only = write(dir.path(), "h.csv", "t,x\n");
    for d in [&data, &header_only] {
        assert_eq!(run(&["estimate", "--config", &cfg, "--data", d]), EXIT_CONFIG);
    }
}

#[test]
fn estimate_singular_step_is_numerical() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        dir.path(),
        "c.json",
        r#"{"model": {"id": "ar", "theta": [0.5, 0.1]}, "estimator": {"tuning": {"c": 0.0}}}"#,
    );
    let data = write(dir.path(), "d.csv", "0\n0\n0\n0\n");
    let out = dir.path().join("out");
    assert_eq!(
        run(&["estimate", "--config", &cfg, "--data", &data, "--out", out.to_str().unwrap()]),
        EXIT_NUMERICAL
    );
    let state: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("final_state.json")).unwrap()).unwrap();
    assert_eq!(state["step_failures"][0]["step"], 1);
}

#[test]
fn bad_config_and_missing_files() {
    let dir = TempDir::new().unwrap();
    let unknown = write(dir.path(), "u.json", r#"{"model": {"id": "normal_location"}, "x": 1}"#);
    let invalid = write(dir.path(), "i.json", r#"{"model": {"id": "normal_location", "sigma": -1}}"#);
    let missing = dir.path().join("nope.json");
    assert_eq!(run(&["simulate", "--config", &unknown]), EXIT_CONFIG);
    assert_eq!(run(&["simulate", "--config", &invalid]), EXIT_CONFIG);
    assert_eq!(run(&["simulate", "--config", missing.to_str().unwrap()]), EXIT_IO);
    assert_eq!(run(&["simulate"]), EXIT_CONFIG);
    assert_eq!(run(&["no-such-command"]), EXIT_CONFIG);
}

#[test]
fn diagnose_requires_theta_true() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "c.json", r#"{"model": {"id": "normal_location"}, "diagnostics": {}}"#);
    let data = write(dir.path(), "d.csv", "1\n2\n3\n");
    let err = recest::cli::cmd_diagnose(
        &recest::cli::parse_config(&fs::read_to_string(&cfg).unwrap()).unwrap(),
        &[1.0, 2.0, 3.0],
        dir.path(),
        1,
    )
    .unwrap_err();
    assert!(err.to_string().contains("diagnostics.theta_true"), "{err}");
    assert_eq!(run(&["diagnose", "--config", &cfg, "--data", &data]), EXIT_CONFIG);
}

#[test]
fn diagnose_disabled_writes_nothing() {
    let dir = TempDir::new().unwrap();
    let data = write(dir.path(), "d.csv", "1\n2\n3\n");
    for (i, text) in [
        r#"{"model": {"id": "normal_location"}, "diagnostics": {"enabled": false}}"#,
        r#"{"model": {"id": "normal_location"}, "diagnostics": {"probes": {"linearity": false, "condition_e": false}}}"#,
    ]
    .iter()
    .enumerate()
    {
        let cfg = write(dir.path(), &format!("c{i}.json"), text);
        let out = dir.path().join(format!("out{i}"));
        let config = recest::cli::parse_config(text).unwrap();
        assert!(recest::cli::cmd_diagnose(&config, &[1.0, 2.0, 3.0], &out, 1).unwrap().is_empty());
        assert_eq!(
            run(&["diagnose", "--config", &cfg, "--data", &data, "--out", out.to_str().unwrap()]),
            EXIT_OK
        );
        assert!(!out.exists());
    }
}

#[test]
fn diagnose_gw_condition_e() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        dir.path(),
        "c.json",
        r#"{"model": {"id": "gw_poisson"}, "plan": {"n": 60, "prefix": 0},
            "diagnostics": {"theta_true": [0.4054651081081644], "scaling": "h_sqrt"}}"#,
    );
    let out = dir.path().join("out");
    let o = out.to_str().unwrap();
    assert_eq!(run(&["simulate", "--config", &cfg, "--out", o]), 0);
    let data = out.join("series.csv");
    assert_eq!(run(&["diagnose", "--config", &cfg, "--data", data.to_str().unwrap(), "--out", o]), 0);
    let csv = fs::read_to_string(out.join("condition_e.csv")).unwrap();
    assert!(csv.starts_with("t,row,col,value\n"));
    let last: f64 = csv.lines().last().unwrap().split(',').nth(3).unwrap().parse().unwrap();
    assert!((last - 1.0 / 1.5).abs() < 1e-8, "{last}");
    assert!(out.join("residuals.csv").exists());
}

#[test]
fn same_config_gives_identical_files() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "c.json", r#"{"model": {"id": "ao"}, "estimator": {"psi": {"psi": "hampel", "alpha": 1.8, "beta": 4}}}"#);
    let mut outputs = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("o{k}"));
        let o = out.to_str().unwrap();
        assert_eq!(run(&["simulate", "--config", &cfg, "--out", o]), 0);
        let data = out.join("series.csv");
        assert_eq!(run(&["estimate", "--config", &cfg, "--data", data.to_str().unwrap(), "--out", o]), 0);
        outputs.push(
            ["series.csv", "series.json", "trajectory.csv", "final_state.json"]
                .map(|f| fs::read(out.join(f)).unwrap()),
        );
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn experiment_normality_small_plan() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "p.json", r#"{"horizon": 50, "replications": 150}"#);
    let out = dir.path().join("out");
    assert_eq!(
        run(&["experiment-normality", "--config", &cfg, "--out", out.to_str().unwrap(), "--workers", "2"]),
        0
    );
    let report: recest::diagnostics::NormalityReport =
        serde_json::from_str(&fs::read_to_string(out.join("normality_report.json")).unwrap()).unwrap();
    assert_eq!(report.n_samples, 150);
}

#[test]
fn experiment_fig1_small_plan() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "f.json", r#"{"plan": {"replications": 8, "n": 40}}"#);
    let out = dir.path().join("out");
    assert_eq!(run(&["experiment-fig1", "--config", &cfg, "--out", out.to_str().unwrap()]), 0);
    let mse = fs::read_to_string(out.join("fig1_mse.csv")).unwrap();
    assert!(mse.starts_with("estimator_id,t,mse\n"));
    assert_eq!(mse.lines().count(), 1 + 3 * 36);
    let trace = fs::read_to_string(out.join("fig1_trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 1 + 3 * 40);
    assert_eq!(run(&["experiment-fig1", "--config", &cfg, "--workers", "0"]), EXIT_CONFIG);
}
