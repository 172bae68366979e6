//! The `ldrate` binary end to end.

use std::fs;
use std::path::Path;
use std::process::Command;

use serde_json::Value;

const CONFIG: &str = r#"{
  "name": "cli-test",
  "chain": {"rates": [[-1, 1], [1, -1]]},
  "t0": 1.0,
  "seed": 5,
  "samples_per_pair": 4000,
  "rates": {"points": [
    {"rho": [0.5, 0.5], "j": [[0, 0.5], [0.5, 0]]},
    {"rho": [0.7, 0.3]}
  ]},
  "infconv": {"rho": [0.7, 0.3]},
  "contract": {"rho": [[0.6, 0.4]]}
}"#;

fn ldrate(args: &[&str], dir: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_ldrate")).args(args).current_dir(dir).env_remove("LDRATE_SEED").output().expect("binary runs")
}

fn setup(config: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("exp.json"), config).unwrap();
    dir
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn rates_vanish_at_the_invariant_measure() {
    let dir = setup(CONFIG);
    let out = ldrate(&["rates", "--config", "exp.json", "--out", "o"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = read_json(&dir.path().join("o/rates.json"));
    let first = &v["result"]["points"][0];
    assert!(first["dvg"].as_f64().unwrap().abs() < 1e-10);
    assert!(first["bfg"].as_f64().unwrap().abs() < 1e-10);
    let second = v["result"]["points"][1]["dvg"].as_f64().unwrap();
    assert!((second - (0.7f64.sqrt() - 0.3f64.sqrt()).powi(2)).abs() < 1e-6);
    assert_eq!(v["seed"], 5);
    assert!(dir.path().join("o/rates.csv").exists() && dir.path().join("o/rates.schema.json").exists());
}

#[test]
fn infconv_is_reproducible_across_runs_threads_and_cache() {
    let dir = setup(CONFIG);
    let run = |extra: &[&str], out: &str| {
        let mut args = vec!["infconv", "--config", "exp.json", "--out", out];
        args.extend_from_slice(extra);
        let o = ldrate(&args, dir.path());
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        fs::read(dir.path().join(out).join("infconv.json")).unwrap()
    };
    let plain = run(&["--threads", "1"], "a");
    assert_eq!(plain, run(&["--threads", "1"], "b"));
    assert_eq!(plain, run(&["--threads", "3"], "c"));

    let s = ldrate(&["bridge-sample", "--config", "exp.json", "--out", "d", "--cache", "cache"], dir.path());
    assert!(s.status.success());
    assert!(fs::read_dir(dir.path().join("cache")).unwrap().next().is_some());
    assert_eq!(plain, run(&["--cache", "cache"], "e"));
}

#[test]
fn seed_override_changes_the_recorded_hash() {
    let dir = setup(CONFIG);
    let base = ldrate(&["chain-info", "--config", "exp.json", "--out", "a"], dir.path());
    assert!(base.status.success());
    let overridden = Command::new(env!("CARGO_BIN_EXE_ldrate"))
        .args(["chain-info", "--config", "exp.json", "--out", "b"])
        .current_dir(dir.path())
        .env("LDRATE_SEED", "99")
        .output()
        .unwrap();
    assert!(overridden.status.success());
    let a = read_json(&dir.path().join("a/chain-info.json"));
    let b = read_json(&dir.path().join("b/chain-info.json"));
    assert_eq!(b["seed"], 99);
    assert_ne!(a["config_hash"], b["config_hash"]);
}

#[test]
fn failures_leave_an_error_record() {
    let dir = setup(r#"{"chain": {"rates": [[-1, 2], [1, -1]]}, "t0": 1.0, "seed": 1}"#);
    let out = ldrate(&["rates", "--config", "exp.json", "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let v = read_json(&dir.path().join("o/rates.error.json"));
    assert_eq!(v["error"], "NonZeroRowSum");
    assert_eq!(v["command"], "rates");

    let dir = setup(r#"{"chain": {"rates": [[-1, 1], [1, -1]]}, "t0": 1.0, "seed": 1}"#);
    let out = ldrate(&["infconv", "--config", "exp.json", "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(read_json(&dir.path().join("o/infconv.error.json"))["error"], "Config");
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let dir = setup(CONFIG);
    let out = ldrate(&["frobnicate", "--config", "exp.json", "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}
