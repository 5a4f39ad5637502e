//! End-to-end tests that drive the compiled `kgans` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn kgans(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kgans"))
        .args(args)
        .output()
        .expect("binary should spawn")
}

fn expect_ok(args: &[&str]) -> Output {
    let out = kgans(args);
    assert!(
        out.status.success(),
        "expected success for {args:?}:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn expect_code(args: &[&str], code: i32) -> Output {
    let out = kgans(args);
    assert_eq!(
        out.status.code(),
        Some(code),
        "wrong exit for {args:?}:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read(path: &Path) -> String {
    fs::read_to_string(path).unwrap_or_else(|e| panic!("reading {}: {e}", path.display()))
}

/// Shared flags for a train run small enough to finish in well under a
/// second.
fn small_train(dir: &Path, extra: &[&str]) -> Vec<String> {
    let mut args: Vec<String> = [
        "train",
        "--preset",
        "td1",
        "--n",
        "400",
        "--k",
        "2",
        "--seed",
        "5",
        "--iters-per-epoch",
        "30",
        "--batch-size",
        "20",
        "--burn-in",
        "10",
        "--eval-samples",
        "300",
        "--out",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    args.push(dir.to_string_lossy().into_owned());
    if !extra.contains(&"--epochs") {
        args.push("--epochs".into());
        args.push("2".into());
    }
    args.extend(extra.iter().map(|s| s.to_string()));
    args
}

fn run_train(dir: &Path, extra: &[&str]) {
    let args = small_train(dir, extra);
    let refs: Vec<&str> = args.iter().map(|s| s.as_str()).collect();
    expect_ok(&refs);
}

#[test]
fn dataset_writes_the_requested_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("toy.csv");
    expect_ok(&["dataset", "--preset", "td1", "--n", "500", "--seed", "7", "--out",
        out.to_str().unwrap()]);
    let text = read(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("x0,x1,label"));
    assert_eq!(lines.count(), 500);
}

#[test]
fn zero_radius_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("toy.csv");
    let result = expect_code(
        &["dataset", "--centers", "0,0", "--radius", "0", "--n", "10", "--out",
            out.to_str().unwrap()],
        2,
    );
    let stderr = String::from_utf8_lossy(&result.stderr);
    assert!(stderr.contains("radius"), "message should name the field: {stderr}");
    assert!(!out.exists());
}

#[test]
fn same_flags_and_seed_reproduce_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    run_train(&a, &[]);
    run_train(&b, &[]);
    assert_eq!(read(&a.join("history.csv")), read(&b.join("history.csv")));
    assert_eq!(read(&a.join("ensemble.json")), read(&b.join("ensemble.json")));
    assert_eq!(read(&a.join("data.csv")), read(&b.join("data.csv")));
}

#[test]
fn resume_matches_an_uninterrupted_run() {
    let tmp = tempfile::tempdir().unwrap();
    let full = tmp.path().join("full");
    let halted = tmp.path().join("halted");
    run_train(&full, &["--epochs", "3"]);
    run_train(&halted, &[]);
    run_train(&halted, &["--resume", "--epochs", "3"]);
    assert_eq!(read(&full.join("history.csv")), read(&halted.join("history.csv")));
    assert_eq!(read(&full.join("ensemble.json")), read(&halted.join("ensemble.json")));
    assert_eq!(
        read(&full.join("checkpoints/epoch-0002.json")),
        read(&halted.join("checkpoints/epoch-0002.json"))
    );
    assert_eq!(read(&full.join("config.json")), read(&halted.join("config.json")));
}

#[test]
fn resume_rejects_changed_settings() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    run_train(&dir, &[]);
    let out = expect_code(
        &["train", "--resume", "--out", dir.to_str().unwrap(), "--epochs", "3", "--k", "3"],
        2,
    );
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("epochs"), "{stderr}");
}

#[test]
fn eval_is_reproducible_modulo_timestamp() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    run_train(&dir, &[]);
    expect_ok(&["eval", "--run", dir.to_str().unwrap(), "--samples", "500"]);
    let first_metrics = read(&dir.join("metrics.json"));
    let first_figure = read(&dir.join("figure.svg"));
    expect_ok(&["eval", "--run", dir.to_str().unwrap(), "--samples", "500"]);
    let second_metrics = read(&dir.join("metrics.json"));
    let second_figure = read(&dir.join("figure.svg"));

    let strip = |text: &str| {
        text.lines()
            .filter(|l| !l.contains("generated_at"))
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(strip(&first_metrics), strip(&second_metrics));
    assert_eq!(first_figure, second_figure);

    let parsed: serde_json::Value = serde_json::from_str(&first_metrics).unwrap();
    assert_eq!(parsed["samples"], 500);
    assert_eq!(parsed["grid_bins"], 50);
    assert!(parsed["coverage"].is_f64());
    assert!(parsed["precision"].is_f64());
    assert_eq!(parsed["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(parsed["cell_counts"].as_array().unwrap().len(), 2);
}

#[test]
fn an_existing_run_needs_force() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    run_train(&dir, &[]);
    let args = small_train(&dir, &[]);
    let refs: Vec<&str> = args.iter().map(|s| s.as_str()).collect();
    let out = expect_code(&refs, 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("--force"));
    run_train(&dir, &["--force"]);
    assert!(dir.join("ensemble.json").exists());
}

#[test]
fn runs_without_out_land_under_the_env_root() {
    let tmp = tempfile::tempdir().unwrap();
    let args: Vec<String> = small_train(Path::new("ignored"), &[])
        .into_iter()
        .filter(|a| a != "--out" && a != "ignored")
        .collect();
    let refs: Vec<&str> = args.iter().map(|s| s.as_str()).collect();
    let out = Command::new(env!("CARGO_BIN_EXE_kgans"))
        .args(&refs)
        .env("KGANS_OUT_ROOT", tmp.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(tmp.path().join("kgans-td1-k2-seed5/ensemble.json").exists());
}

#[test]
fn exact_ot_gap_is_tiny_on_a_small_instance() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("points.csv");
    expect_ok(&["dataset", "--centers", "0,0", "--radius", "0.8", "--n", "6", "--seed", "3",
        "--out", csv.to_str().unwrap()]);
    let out = expect_ok(&["ot", "--data", csv.to_str().unwrap(), "--atoms", "0,0;0.3,0.2",
        "--tol", "1e-6", "--exact"]);
    let report: serde_json::Value = serde_json::from_str(&String::from_utf8_lossy(&out.stdout))
        .expect("stdout should be a JSON report");
    let gap = report["exact"]["gap"].as_f64().unwrap();
    assert!(gap.abs() <= 1e-4, "duality gap {gap}");
    assert_eq!(report["dual_weights"].as_array().unwrap().len(), 2);
    assert_eq!(report["cell_masses"].as_array().unwrap().len(), 2);
}

#[test]
fn a_single_atom_reports_the_mean_cost() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("points.csv");
    expect_ok(&["dataset", "--centers", "0.1,-0.2", "--radius", "0.5", "--n", "5", "--seed", "9",
        "--out", csv.to_str().unwrap()]);
    let mean_cost: f64 = read(&csv)
        .lines()
        .skip(1)
        .map(|line| {
            let v: Vec<f64> =
                line.split(',').take(2).map(|x| x.parse().unwrap()).collect();
            (v[0] - 0.25).powi(2) + (v[1] - 0.25).powi(2)
        })
        .sum::<f64>()
        / 5.0;
    let out = expect_ok(&["ot", "--data", csv.to_str().unwrap(), "--atoms", "0.25,0.25"]);
    let report: serde_json::Value =
        serde_json::from_str(&String::from_utf8_lossy(&out.stdout)).unwrap();
    let objective = report["objective"].as_f64().unwrap();
    assert!((objective - mean_cost).abs() <= 1e-9, "{objective} vs {mean_cost}");
}

#[test]
fn infeasible_exact_weights_fail_loudly() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("points.csv");
    expect_ok(&["dataset", "--centers", "0,0", "--radius", "0.5", "--n", "5", "--seed", "2",
        "--out", csv.to_str().unwrap()]);
    let out = expect_code(
        &["ot", "--data", csv.to_str().unwrap(), "--atoms", "0,0;0.3,0.2", "--weights",
            "0.5,0.5", "--exact"],
        2,
    );
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("multiple of 1/5"), "{stderr}");
}

#[test]
fn kgenerators_runs_write_a_monotone_objective() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    expect_ok(&["train", "--mode", "kgenerators", "--preset", "td2", "--n", "300", "--k", "3",
        "--rounds", "8", "--seed", "1", "--out", dir.to_str().unwrap()]);
    let history = read(&dir.join("history.csv"));
    let objectives: Vec<f64> = history
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(!objectives.is_empty());
    assert!(
        objectives.windows(2).all(|w| w[1] <= w[0] + 1e-12),
        "objectives rose: {objectives:?}"
    );
    assert!(dir.join("kgenerators.json").exists());

    expect_ok(&["eval", "--run", dir.to_str().unwrap(), "--samples", "400"]);
    let metrics: serde_json::Value =
        serde_json::from_str(&read(&dir.join("metrics.json"))).unwrap();
    assert!(metrics["coverage"].as_f64().unwrap() > 0.0);
    assert!(dir.join("figure.svg").exists());
}
