use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

fn lieflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lieflow"))
        .args(args)
        .output()
        .unwrap()
}

fn run(cmd: &str, name: &str, out: &Path) -> Output {
    let cfg = scenario(name);
    lieflow(&[
        cmd,
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ])
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn simulate_reaches_the_closed_form_point() {
    let dir = tempfile::tempdir().unwrap();
    let out = run("simulate", "heisenberg_linear.json", dir.path());
    assert_eq!(out.status.code(), Some(0));
    let summary = json(&dir.path().join("summary.json"));
    assert_eq!(summary["all_pass"], true);
    let coords: Vec<f64> = summary["terminal"]["coordinates"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    for (got, want) in coords.iter().zip([2.0, 2.0, 4.0]) {
        assert!((got - want).abs() < 1e-10);
    }
    for method in ["concatenation", "decomposition", "rk4"] {
        assert!(dir.path().join(format!("trajectory_{method}.csv")).exists());
    }
}

#[test]
fn corrupted_algebra_fails_verify_and_errors_elsewhere() {
    let dir = tempfile::tempdir().unwrap();
    let out = run("verify", "corrupted_algebra.json", &dir.path().join("v"));
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("FAIL algebra_jacobi"));
    let out = run("analyze", "corrupted_algebra.json", &dir.path().join("a"));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn zero_system_reaches_only_the_identity() {
    let dir = tempfile::tempdir().unwrap();
    let out = run("reach", "rn_zero.json", dir.path());
    assert_eq!(out.status.code(), Some(0));
    let csv = fs::read_to_string(dir.path().join("cloud_fwd.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert!(!rows.is_empty());
    for row in rows {
        let fields: Vec<f64> = row.split(',').skip(2).map(|v| v.parse().unwrap()).collect();
        assert!(fields.iter().all(|v| *v == 0.0));
    }
}

#[test]
fn analyze_issues_the_sphere_certificate_on_so3() {
    let dir = tempfile::tempdir().unwrap();
    let out = run("analyze", "so3_bilinear.json", dir.path());
    assert_eq!(out.status.code(), Some(0));
    let report = json(&dir.path().join("report.json"));
    assert_eq!(
        report["obstruction"]["case_tag"],
        "compact_semisimple_sphere_invariant"
    );
    assert_eq!(report["obstruction"]["certificate_issued"], true);
}

#[test]
fn analyze_finds_no_obstruction_on_rn() {
    let dir = tempfile::tempdir().unwrap();
    let out = run("analyze", "rn_classical.json", dir.path());
    assert_eq!(out.status.code(), Some(0));
    let report = json(&dir.path().join("report.json"));
    assert_eq!(
        report["obstruction"]["case_tag"],
        "euclidean_no_obstruction"
    );
}

#[test]
fn bad_arguments_and_missing_files_are_errors() {
    assert_eq!(lieflow(&["simulate", "--bogus"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let out = run("simulate", "does_not_exist.json", dir.path());
    assert_eq!(out.status.code(), Some(2));
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"group": {"name": "SO3"}, "unexpected": 1}"#).unwrap();
    let out = lieflow(&[
        "verify",
        "--config",
        bad.to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}
