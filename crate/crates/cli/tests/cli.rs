use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn parlab(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_parlab"))
        .args(args)
        .env("PARLAB_OUT", out)
        .output()
        .expect("parlab runs")
}

fn config(name: &str) -> String {
    configs().join(name).to_string_lossy().into_owned()
}

#[test]
fn solve_passes_and_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = parlab(&["--config", &config("heat_solve.json"), "--reproducible", "solve"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("PASS solve"));
    let report = dir.path().join("heat_solve/report.jsonl");
    assert!(report.exists());
    assert!(dir.path().join("heat_solve/solution.json").exists());
}

#[test]
fn structure_failure_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = parlab(&["--config", &config("structure_bad_b.json"), "validate-structure"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let text = fs::read_to_string(dir.path().join("structure_bad_b/report.jsonl")).unwrap();
    assert!(text.contains("p > 2"));
}

#[test]
fn action_mismatch_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = parlab(&["--config", &config("heat_solve.json"), "certify", "harnack"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("certify.harnack"));
}

#[test]
fn bad_config_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = parlab(&["--config", "/nonexistent/cfg.json", "solve"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let bad = dir.path().join("bad.json");
    let text = fs::read_to_string(configs().join("heat_solve.json"))
        .unwrap()
        .replace("\"dt\": 0.0009765625", "\"dt\": -1.0");
    fs::write(&bad, text).unwrap();
    let o = parlab(&["--config", bad.to_str().unwrap(), "solve"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("grid"));
}

#[test]
fn reproducible_reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["--config", &config("harnack_checkerboard.json"), "--reproducible", "certify", "harnack"];
    assert_eq!(parlab(&args, a.path()).status.code(), Some(0));
    assert_eq!(parlab(&args, b.path()).status.code(), Some(0));
    let ra = fs::read(a.path().join("harnack_checkerboard/report.jsonl")).unwrap();
    let rb = fs::read(b.path().join("harnack_checkerboard/report.jsonl")).unwrap();
    assert_eq!(ra, rb);
    assert_eq!(String::from_utf8_lossy(&ra).lines().count(), 4);
}

#[test]
fn baseline_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["--config", &config("heat_solve.json"), "--reproducible", "solve"];
    assert_eq!(parlab(&args, dir.path()).status.code(), Some(0));
    let report = dir.path().join("heat_solve/report.jsonl");
    let baseline = dir.path().join("baseline.json");
    let (r, b) = (report.to_str().unwrap(), baseline.to_str().unwrap());

    let o = parlab(&["baseline", "compare", "--report", r, "--baseline", b], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("baseline record"));

    let o = parlab(&["baseline", "record", "--report", r, "--baseline", b], dir.path());
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(parlab(&args, dir.path()).status.code(), Some(0));
    let o = parlab(&["baseline", "compare", "--report", r, "--baseline", b], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));

    // A different seed changes the inputs hash, so there is nothing to compare against.
    assert_eq!(parlab(&["--config", &config("heat_solve.json"), "--seed", "7", "solve"], dir.path()).status.code(), Some(0));
    let o = parlab(&["baseline", "compare", "--report", r, "--baseline", b], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn report_subcommand_validates() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["--config", &config("structure_bad_b.json"), "validate-structure"];
    assert_eq!(parlab(&args, dir.path()).status.code(), Some(1));
    let report = dir.path().join("structure_bad_b/report.jsonl");
    let o = parlab(&["report", report.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).contains("1 records, 1 failed"));
    fs::write(&report, "{\"schema_version\": 1}\n").unwrap();
    let o = parlab(&["report", report.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn out_flag_overrides_environment() {
    let env_dir = tempfile::tempdir().unwrap();
    let flag_dir = tempfile::tempdir().unwrap();
    let o = parlab(
        &["--config", &config("heat_solve.json"), "--out", flag_dir.path().to_str().unwrap(), "--workers", "2", "solve"],
        env_dir.path(),
    );
    assert_eq!(o.status.code(), Some(0));
    assert!(flag_dir.path().join("heat_solve/report.jsonl").exists());
    assert!(!env_dir.path().join("heat_solve").exists());
}
