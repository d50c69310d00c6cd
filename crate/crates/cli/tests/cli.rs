use serde_json::Value;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.json"))
}

fn ies(args: &[&str]) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ies-sched"));
    cmd.args(args);
    for var in ["IES_SCENARIO", "IES_MODE", "IES_CONFIDENCE", "IES_BACKEND", "IES_OUT", "IES_SEED"] {
        cmd.env_remove(var);
    }
    cmd
}

fn stderr_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().rev().find(|l| l.starts_with('{')).unwrap_or_else(|| panic!("no JSON error in {text}"));
    serde_json::from_str(line).unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn run_writes_the_report_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let out = ies(&["--scenario", scenario("toy_t3").to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "run"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["prices", "loads", "dispatch", "reserves", "temperatures", "renewables"] {
        assert!(dir.path().join(format!("{name}.csv")).is_file(), "{name}.csv");
    }
    let summary = read_json(&dir.path().join("summary.json"));
    assert_eq!(summary["csv_schema_version"], 1);
    assert_eq!(summary["mode"], 3);
    assert_eq!(summary["verified"], true);
    let stdout: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(stdout["summary"]["f1"], summary["f1"]);
}

#[test]
fn environment_variables_stand_in_for_flags() {
    let dir = tempfile::tempdir().unwrap();
    let out = ies(&["run"])
        .env("IES_SCENARIO", scenario("toy_t3"))
        .env("IES_MODE", "1")
        .env("IES_OUT", dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(read_json(&dir.path().join("summary.json"))["mode"], 1);
}

#[test]
fn missing_scenario_is_a_schema_error() {
    let out = ies(&["run"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"], "schema");

    let out = ies(&["--scenario", "/no/such/scenario.json", "run"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_fields_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = read_json(&scenario("toy_t3"));
    cfg["surprise"] = Value::from(1);
    let path = dir.path().join("bad.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    let out = ies(&["--scenario", path.to_str().unwrap(), "run"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_json(&out);
    assert_eq!(err["error"], "schema");
    assert_eq!(err["exit_code"], 2);
}

#[test]
fn infeasible_scenario_reports_its_stage() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = read_json(&scenario("toy_t3"));
    cfg["fixed_load"] = serde_json::json!([700, 5000, 800]);
    let path = dir.path().join("heavy.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    let out = ies(&["--scenario", path.to_str().unwrap(), "run"]).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
    let err = stderr_json(&out);
    assert_eq!(err["error"], "infeasible");
    assert_eq!(err["stage"], "static-bounds");
}

#[test]
fn exhausted_time_limit_has_its_own_exit_code() {
    let out =
        ies(&["--scenario", scenario("case2_real").to_str().unwrap(), "--time-limit", "0", "run"]).output().unwrap();
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(stderr_json(&out)["error"], "time-limit");
}

#[test]
fn compare_tabulates_every_mode() {
    let out = ies(&["--scenario", scenario("toy_t3").to_str().unwrap(), "compare"]).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 5);
    assert!(lines[0].starts_with("mode,f1,f2,absorbed_renewables"));
    for (i, line) in lines[1..].iter().enumerate() {
        assert!(line.starts_with(&format!("{},", i + 1)));
        assert!(line.ends_with(','), "no error column expected: {line}");
    }
}

#[test]
fn sweep_over_confidence_writes_a_long_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = ies(&[
        "--scenario",
        scenario("toy_t3").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "sweep",
        "--parameter",
        "confidence",
        "--values",
        "0.85,0.95",
    ])
    .output()
    .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 2 * 3);
}

#[test]
fn validate_runs_every_check() {
    let out = ies(&[
        "--scenario",
        scenario("toy_t3").to_str().unwrap(),
        "--samples",
        "20000",
        "validate",
        "--deviations",
        "100",
    ])
    .output()
    .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["pass"], true);
    assert_eq!(report["follower_deviations"]["samples"], 100);
    assert_eq!(report["leader_deviations"]["pass"], true);
}

#[test]
fn oracle_agrees_with_the_joint_solution() {
    let out = ies(&[
        "--scenario",
        scenario("toy_t3").to_str().unwrap(),
        "--segments",
        "32",
        "oracle",
        "--mu-step",
        "0.00185",
        "--gamma-step",
        "0.00095",
    ])
    .output()
    .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["agree"], true);
}

#[test]
fn oversized_oracle_grid_is_refused() {
    let out = ies(&[
        "--scenario",
        scenario("case2_real").to_str().unwrap(),
        "oracle",
        "--mu-step",
        "0.0005",
        "--gamma-step",
        "0.0005",
    ])
    .output()
    .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"], "grid-too-large");
}

#[test]
fn lp_file_matches_the_solved_program() {
    let dir = tempfile::tempdir().unwrap();
    let lp = dir.path().join("toy.lp");
    let out = ies(&["--scenario", scenario("toy_t3").to_str().unwrap(), "run", "--write-lp", lp.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&lp).unwrap();
    assert!(text.contains("Maximize") && text.contains("Binaries") && text.trim_end().ends_with("End"));
}
