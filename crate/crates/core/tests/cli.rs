use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_finslerlab")).args(args).output().expect("binary runs")
}

fn run_on(verb: &str, file: &str, extra: &[&str]) -> (i32, Value, String) {
    let path = scenario(file);
    let mut args = vec![verb, path.to_str().unwrap()];
    args.extend_from_slice(extra);
    let out = run(&args);
    let report = serde_json::from_slice(&out.stdout).unwrap_or(Value::Null);
    (out.status.code().unwrap(), report, String::from_utf8_lossy(&out.stderr).into_owned())
}

#[test]
fn validate_exit_codes() {
    let (code, rep, _) = run_on("validate", "randers_validate.json", &[]);
    assert_eq!(code, 0);
    assert_eq!(rep["overall_pass"], true);
    assert_eq!(rep["structures"][0]["samples"], 64);

    let (code, rep, err) = run_on("validate", "randers_invalid.json", &[]);
    assert_eq!(code, 1);
    assert!(err.contains("positive_definite"));
    let checks = rep["structures"][0]["checks"].as_array().unwrap();
    let pd = checks.iter().find(|c| c["name"] == "positive_definite").unwrap();
    assert_eq!(pd["pass"], false);
    assert!(pd["note"].as_str().unwrap().contains("NotPositiveDefinite"));

    let (code, rep, err) = run_on("validate", "malformed.json", &[]);
    assert_eq!(code, 2);
    assert_eq!(rep, Value::Null);
    assert!(err.contains("line 4, column"), "{err}");
}

#[test]
fn missing_file_is_a_config_error() {
    let (code, _, err) = run_on("validate", "does_not_exist.json", &[]);
    assert_eq!(code, 2);
    assert!(err.contains("cannot read"));
}

#[test]
fn geodesic_line_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("line.csv");
    let (code, rep, _) = run_on("geodesic", "euclidean_line.json", &["--csv", csv.to_str().unwrap()]);
    assert_eq!(code, 0);
    let end: Vec<f64> = rep["endpoint"]["position"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert!((end[0] - 2.0).abs() <= 1e-9 && (end[1] - 1.0).abs() <= 1e-9, "{end:?}");
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "time,t1,t2,v1,v2,speed_F");
    assert_eq!(lines.count(), 201);
    assert_eq!(rep["csv"], csv.to_str().unwrap());
}

#[test]
fn geodesic_flags_override_the_scenario() {
    let (code, rep, _) = run_on("geodesic", "euclidean_line.json", &["--t0", "-1,0.5", "--v0", "0,-2", "--tmax", "0.5", "--samples", "11"]);
    assert_eq!(code, 0);
    assert_eq!(rep["samples"], 11);
    let end: Vec<f64> = rep["endpoint"]["position"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert!((end[0] + 1.0).abs() <= 1e-12 && (end[1] + 0.5).abs() <= 1e-9, "{end:?}");
}

#[test]
fn equator_stays_on_the_equator() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("eq.csv");
    let (code, _, _) = run_on("geodesic", "sphere_equator.json", &["--csv", csv.to_str().unwrap()]);
    assert_eq!(code, 0);
    let text = std::fs::read_to_string(&csv).unwrap();
    let drift = text
        .lines()
        .skip(1)
        .map(|l| (l.split(',').nth(1).unwrap().parse::<f64>().unwrap() - std::f64::consts::FRAC_PI_2).abs())
        .fold(0.0, f64::max);
    assert!(drift <= 1e-6, "{drift}");
}

#[test]
fn zero_velocity_is_a_config_error() {
    let (code, _, err) = run_on("geodesic", "zero_velocity.json", &[]);
    assert_eq!(code, 2);
    assert!(err.contains("velocity"), "{err}");
}

#[test]
fn affine_verdicts() {
    let (code, rep, _) = run_on("affine", "identity_minkowski.json", &[]);
    assert_eq!(code, 0);
    assert_eq!(rep["affine"]["verdict"], "affine");
    assert!(rep["affine"]["tau_sup"].as_f64().unwrap() <= 1e-10);
    assert!(rep["tension"]["max_abs"].as_f64().unwrap() <= 1e-8);

    let (code, rep, _) = run_on("affine", "rotation_isometry.json", &[]);
    assert_eq!(code, 0);
    assert_eq!(rep["isometry"]["pass"], true);
    assert_eq!(rep["affine"]["verdict"], "affine");

    let (code, rep, err) = run_on("affine", "quadratic_map.json", &[]);
    assert_eq!(code, 1);
    assert!(err.contains("affine"));
    assert_eq!(rep["affine"]["verdict"], "not-affine");
    assert!(rep["affine"]["witness"]["t"].is_array());
    assert_eq!(rep["affine"]["tau_sup"].as_f64().unwrap(), 2.0);
}

#[test]
fn jet_report_pass_and_fault_injection() {
    let (code, rep, _) = run_on("jet-report", "jet_euclidean_euclidean.json", &[]);
    assert_eq!(code, 0);
    assert_eq!(rep["samples"], 100);
    assert_eq!(rep["blocks"].as_array().unwrap().len(), 45);
    assert!(rep["blocks"].as_array().unwrap().iter().all(|b| b["max_abs_closed"].as_f64() == Some(0.0)));

    let (code, rep, err) = run_on("jet-report", "jet_corrupt.json", &[]);
    assert_eq!(code, 1);
    assert!(err.contains("C17"), "{err}");
    assert_eq!(rep["overall_pass"], false);
    let bad: Vec<&str> = rep["blocks"].as_array().unwrap().iter().filter(|b| b["pass"] == false).map(|b| b["label"].as_str().unwrap()).collect();
    assert_eq!(bad, ["C17"]);
}

#[test]
fn reports_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let path = scenario("jet_randers_sphere.json");
    let mut outputs = Vec::new();
    for (k, threads) in ["1", "3", "3"].iter().enumerate() {
        let out = dir.path().join(format!("r{k}.json"));
        let status = Command::new(env!("CARGO_BIN_EXE_finslerlab"))
            .args(["jet-report", path.to_str().unwrap(), "--out", out.to_str().unwrap()])
            .env("FINSLERLAB_THREADS", threads)
            .status()
            .unwrap();
        assert_eq!(status.code(), Some(0));
        outputs.push(std::fs::read(&out).unwrap());
    }
    assert!(outputs.windows(2).all(|w| w[0] == w[1]));
}
