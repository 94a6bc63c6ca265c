use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use smcf_lab::cli::{run_subcommand, EXIT_DIVERGED, EXIT_FAIL, EXIT_INVALID_CONFIG, EXIT_PASS};
use smcf_lab::io::{read_field_csv, read_trace_csv, Report};

fn shipped(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn write_config(dir: &Path, json: &str) -> PathBuf {
    let p = dir.join("config.json");
    fs::write(&p, json).unwrap();
    p
}

fn run(command: &str, config: &Path, out: &Path, extra: &[&str]) -> i32 {
    let mut argv = vec!["smcf-lab", command, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    argv.extend_from_slice(extra);
    run_subcommand(argv)
}

fn report(out: &Path) -> Report {
    serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap()
}

const SMALL: &str = r#"{"dim":1,"res":32,"dt":0.001,"T":0.05,"initial":{"family":"fourier","sin":[0.2]},"M":4,"baseSeed":7}"#;

#[test]
fn simulate_writes_a_consistent_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    assert_eq!(run("simulate", &cfg, &out, &[]), EXIT_PASS);
    let r = report(&out);
    assert_eq!(r.command, "simulate");
    assert_eq!(r.config.worker_count, None);
    let names: Vec<&str> = r.files.iter().map(|f| f.file.as_str()).collect();
    for id in 0..4 {
        assert!(names.contains(&format!("trace_{id}.csv").as_str()));
        assert!(names.contains(&format!("final_{id}.csv").as_str()));
    }
    assert!(names.contains(&"stats.csv"));
    for f in &r.files {
        let bytes = fs::read(out.join(&f.file)).unwrap();
        assert_eq!(hex::encode(Sha256::digest(&bytes)), f.sha256, "{}", f.file);
    }
    let trace = read_trace_csv(fs::read(out.join("trace_2.csv")).unwrap().as_slice()).unwrap();
    assert_eq!(trace.samples.len(), 51);
    assert!((trace.samples.last().unwrap().t - 0.05).abs() < 1e-12);
    let u = read_field_csv(fs::read(out.join("final_2.csv")).unwrap().as_slice()).unwrap();
    assert_eq!(u.grid().res(), 32);
}

#[test]
fn reruns_are_bit_identical_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(run("simulate", &cfg, &a, &["--workers", "1"]), EXIT_PASS);
    assert_eq!(run("simulate", &cfg, &b, &["--workers", "3"]), EXIT_PASS);
    for f in ["stats.csv", "report.json", "trace_3.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn invalid_configs_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    for bad in [
        "{",
        r#"{"dim":1,"res":32,"T":0.1,"initial":{"family":"fourier"},"bogus":1}"#,
        r#"{"dim":4,"res":32,"T":0.1,"initial":{"family":"fourier"}}"#,
        r#"{"dim":1,"res":32,"T":-1,"initial":{"family":"fourier"}}"#,
    ] {
        let cfg = write_config(dir.path(), bad);
        assert_eq!(run("simulate", &cfg, &out, &[]), EXIT_INVALID_CONFIG, "{bad}");
    }
    assert_eq!(run("simulate", &dir.path().join("missing.json"), &out, &[]), EXIT_INVALID_CONFIG);
    let cfg = write_config(dir.path(), SMALL);
    assert_eq!(run("simulate", &cfg, &out, &["--workers", "0"]), EXIT_INVALID_CONFIG);
    assert_eq!(run_subcommand(["smcf-lab", "no-such-command"]), EXIT_INVALID_CONFIG);
}

#[test]
fn unstable_explicit_step_is_refused_then_diverges_when_forced() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = shipped("huge_dt.json");
    assert_eq!(run("simulate", &cfg, &out, &[]), EXIT_INVALID_CONFIG);
    assert_eq!(run("simulate", &cfg, &out, &["--force"]), EXIT_DIVERGED);
    let r = report(&out);
    assert!(!r.ensemble.unwrap().valid);
}

#[test]
fn failing_verdicts_exit_with_code_one() {
    // the noise-free drift prediction includes noise terms and cannot match
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert_eq!(run("energy-report", &shipped("deterministic.json"), &out, &[]), EXIT_FAIL);
    let r = report(&out);
    assert!(r.verdicts.iter().any(|v| v.name == "drift_prediction" && !v.pass));
    assert!(r.verdicts.iter().filter(|v| v.name.starts_with("supermartingale")).all(|v| v.pass));
}

#[test]
fn verification_commands_pass() {
    let dir = tempfile::tempdir().unwrap();
    for (cmd, cfg) in [("verify-identities", "identities.json"), ("coercivity-check", "standard.json"), ("galerkin-compare", "galerkin.json")] {
        let out = dir.path().join(cmd);
        assert_eq!(run(cmd, &shipped(cfg), &out, &[]), EXIT_PASS, "{cmd}");
        let r = report(&out);
        assert!(!r.verdicts.is_empty() && r.all_pass());
        assert!(!r.data.is_null());
    }
}

#[test]
fn max_principle_reports_both_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let code = run("max-principle", &cfg, &out, &[]);
    let r = report(&out);
    let names: Vec<&str> = r.verdicts.iter().map(|v| v.name.as_str()).collect();
    assert!(names.contains(&"max_principle") && names.contains(&"max_excess"));
    assert_eq!(code == EXIT_PASS, r.all_pass());
}
