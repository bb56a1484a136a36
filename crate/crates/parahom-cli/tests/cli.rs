//! The binary's exit codes and artifacts.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn parahom(dir: &Path, config: &str, args: &[&str]) -> Output {
    let cfg = dir.join("run.cfg");
    fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_parahom"))
        .args(args)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

#[test]
fn malformed_config_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = parahom(dir.path(), "[cell]\nn_y = = 4\n", &["verify"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn invalid_value_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = parahom(dir.path(), "[ladders]\neps = [1/8, 1/4]\n", &["rate-l2"]);
    assert_eq!(out.status.code(), Some(2));
    let out = parahom(dir.path(), "[coefficient]\nfamily = \"sep-trig\"\nparams = [1.5]\n", &["verify"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn verify_on_constant_tensor_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let out = parahom(
        dir.path(),
        "[coefficient]\nfamily = \"constant\"\nparams = [1.7]\n[cell]\nn_y = 32\nn_s_base = 32\n",
        &["verify"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let report = read_json(&dir.path().join("out/report.json"));
    assert_eq!(report["command"], "verify");
    assert_eq!(report["pass"], true);
    assert_eq!(report["config_digest"].as_str().unwrap().len(), 64);
    assert!(!dir.path().join("out/failure.json").exists());
}

#[test]
fn failed_check_exits_with_one_and_records_it() {
    let dir = tempfile::tempdir().unwrap();
    // second order is all the stencil has
    let cfg = "[cell]\nn_y = 32\nn_s_base = 32\n[harness]\nchi2_order = 3\n";
    let out = parahom(dir.path(), cfg, &["verify"]);
    assert_eq!(out.status.code(), Some(1));
    let failure = read_json(&dir.path().join("out/failure.json"));
    assert_eq!(failure["exit_code"], 1);
    assert_eq!(failure["check"]["name"], "chi2.order");
    let report = read_json(&dir.path().join("out/report.json"));
    assert_eq!(report["pass"], false);
}

#[test]
fn zero_limit_tensor_of_sep_trig_is_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = parahom(dir.path(), "[cell]\nn_y = 32\nn_s_base = 32\n", &["tensor", "--mode", "zero"]);
    assert_eq!(out.status.code(), Some(0));
    let report = read_json(&dir.path().join("out/report.json"));
    let a = report["result"]["matrix"][0][0].as_f64().unwrap();
    assert!((a - 1.0).abs() < 1e-3, "{a}");
}

#[test]
fn resolve_prints_a_config_that_parses_back() {
    let dir = tempfile::tempdir().unwrap();
    let out = parahom(dir.path(), "[problem]\nk = [1, 2]\n", &["resolve"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let back = parahom_cli::parse_config(&text).unwrap();
    assert_eq!(back.problem.k, vec![1.0, 2.0]);
}
