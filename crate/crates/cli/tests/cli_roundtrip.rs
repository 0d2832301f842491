//! End-to-end checks of the command-line surface: file formats, exit codes
//! and the study runner's failure capture.

use std::path::Path;
use std::process::Command;

fn hjbd() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hjbd"))
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

#[test]
fn build_validate_and_kernel_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let space = dir.path().join("cycle.json");
    let out = hjbd()
        .args(["space", "build", "--kind", "cycle", "--n", "12"])
        .arg("--out")
        .arg(&space)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let out = hjbd().args(["space", "validate"]).arg(&space).output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("ok: 12 points"));

    let kernel = dir.path().join("kernel.csv");
    let out = hjbd()
        .args(["heat", "kernel"])
        .arg(&space)
        .args(["--h", "0.25", "--out"])
        .arg(&kernel)
        .output()
        .unwrap();
    assert!(out.status.success());
    let body = std::fs::read_to_string(&kernel).unwrap();
    assert!(body.starts_with("# hjbd-schema v1"));
    assert_eq!(body.lines().count(), 2 + 12);
}

#[test]
fn validate_flags_asymmetric_conductance_with_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let space = dir.path().join("bad.json");
    // edge list cannot express asymmetry, so hand in a metric-complete
    // document and break the measure normalization as well
    write(
        &space,
        r#"{
            "points": ["a", "b", "c"],
            "m": [0.5, 0.5, 0.5],
            "edges": [[0, 1, 1.0], [1, 2, 1.0]]
        }"#,
    );
    let out = hjbd().args(["space", "validate"]).arg(&space).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("measure not normalized"));
}

#[test]
fn missing_file_exits_two() {
    let out = hjbd().args(["space", "validate", "/nonexistent/space.json"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn solve_writes_a_readable_run() {
    let dir = tempfile::tempdir().unwrap();
    let space = dir.path().join("cycle.json");
    hjbd()
        .args(["space", "build", "--kind", "cycle", "--n", "8"])
        .arg("--out")
        .arg(&space)
        .status()
        .unwrap();
    let pot = dir.path().join("pot.json");
    write(&pot, r#"{"kind": "constant", "value": 0.5}"#);
    let w0 = dir.path().join("w0.json");
    write(&w0, r#"{"values": [1.0, 1.2, 1.4, 1.2, 1.0, 0.8, 0.6, 0.8]}"#);
    let run = dir.path().join("run.csv");
    let out = hjbd()
        .arg("solve")
        .arg("--space")
        .arg(&space)
        .arg("--potential")
        .arg(&pot)
        .arg("--w0")
        .arg(&w0)
        .args(["--t", "-0.5", "--steps", "100", "--out"])
        .arg(&run)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (field, points) = hjbd_core::io::read_timefield_csv(&run).unwrap();
    assert_eq!(points.len(), 8);
    assert_eq!(field.grid().steps(), 100);

    // and the residual report over that run
    let report = dir.path().join("hjb.csv");
    let out = hjbd()
        .arg("hjb")
        .arg("--space")
        .arg(&space)
        .arg("--run")
        .arg(&run)
        .arg("--potential")
        .arg(&pot)
        .arg("--report")
        .arg(&report)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let body = std::fs::read_to_string(&report).unwrap();
    assert!(body.lines().nth(1).unwrap().starts_with("time,residual_sup"));
    assert_eq!(body.lines().count(), 2 + 101);
}

#[test]
fn study_with_invalid_space_reports_failure_and_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let bad_space = dir.path().join("bad_space.json");
    write(
        &bad_space,
        r#"{
            "points": ["a", "b"],
            "m": [0.9, 0.9],
            "edges": [[0, 1, 1.0]]
        }"#,
    );
    let config = dir.path().join("study.json");
    write(
        &config,
        r#"{
            "study": "all",
            "space": {"kind": "file", "path": "bad_space.json"},
            "potential": {"kind": "constant", "value": 0.5},
            "w0": {"kind": "constant", "value": 1.0},
            "t": -0.25
        }"#,
    );
    let out = hjbd().arg("study").arg(&config).output().unwrap();
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    let report =
        std::fs::read_to_string(dir.path().join("hjbd-out").join("study_report.csv")).unwrap();
    assert!(report.contains("measure not normalized"));
    assert!(report.contains("false"));
}

#[test]
fn identities_study_passes_on_a_cycle() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("study.json");
    write(
        &config,
        r#"{
            "study": "identities",
            "space": {"kind": "cycle", "n": 8},
            "potential": {"kind": "constant", "value": 0.5},
            "w0": {"kind": "fourier", "mean": 1.2, "modes": [{"freq": 1.0, "sin": 0.4}]},
            "t": -0.5,
            "steps": 200,
            "seed": 11
        }"#,
    );
    let out = hjbd().arg("study").arg(&config).output().unwrap();
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    let report =
        std::fs::read_to_string(dir.path().join("hjbd-out").join("study_report.csv")).unwrap();
    assert!(report.contains("chapman-kolmogorov"));
    assert!(report.contains("integration-by-parts"));
    assert!(!report.contains(",false,"));
}

#[test]
fn value_command_produces_the_drift_table() {
    let dir = tempfile::tempdir().unwrap();
    let space = dir.path().join("cycle.json");
    hjbd()
        .args(["space", "build", "--kind", "cycle", "--n", "8"])
        .arg("--out")
        .arg(&space)
        .status()
        .unwrap();
    let pot = dir.path().join("pot.json");
    write(&pot, r#"{"kind": "constant", "value": 0.4}"#);
    let w0 = dir.path().join("w0.json");
    write(&w0, r#"{"values": [1.0, 1.2, 1.4, 1.2, 1.0, 0.8, 0.6, 0.8]}"#);
    let rho0 = dir.path().join("rho0.json");
    write(&rho0, r#"{"values": [1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0]}"#);
    let drifts = dir.path().join("drifts");
    std::fs::create_dir(&drifts).unwrap();
    write(&drifts.join("a_optimal.json"), r#"{"kind": "neg_u"}"#);
    write(&drifts.join("b_zero.json"), r#"{"kind": "zero"}"#);
    write(&drifts.join("c_bump.json"), r#"{"kind": "neg_u_perturbed", "delta": 0.05, "seed": 5}"#);
    let report = dir.path().join("value.csv");
    let out = hjbd()
        .arg("value")
        .arg("--space")
        .arg(&space)
        .arg("--potential")
        .arg(&pot)
        .arg("--w0")
        .arg(&w0)
        .args(["--t", "-0.5"])
        .arg("--rho0")
        .arg(&rho0)
        .arg("--drifts")
        .arg(&drifts)
        .args(["--steps", "300"])
        .arg("--report")
        .arg(&report)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let body = std::fs::read_to_string(&report).unwrap();
    assert!(body.lines().nth(1).unwrap().starts_with("drift_id,J,gap_vs_optimal"));
    assert!(body.contains("a_optimal"));
    assert!(body.contains("b_zero"));
    assert!(body.contains("c_bump"));
}
