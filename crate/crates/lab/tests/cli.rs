use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

fn exitlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_exitlab")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("config.json");
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn identities_at_six_pass_quickly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"n": 6}"#);
    let out = dir.path().join("out");
    let start = Instant::now();
    let o = exitlab(&["verify-identities", "--config", &cfg, "--out", out.to_str().unwrap()]);
    let secs = start.elapsed().as_secs_f64();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(secs < 5.0, "took {secs} s");
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("PASS exact-combinatorics"), "{stdout}");
    for f in ["verify-identities.csv", "verify-identities.json", "verify-identities.config.json"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let csv = std::fs::read_to_string(out.join("verify-identities.csv")).unwrap();
    assert!(csv.starts_with("check,label,estimate,se,reference,reference_se,stat,pass\n"));
    assert!(!csv.contains(",false\n"));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"n": 4, "replicaz": 10}"#);
    let o = exitlab(&["verify-identities", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("replicaz"), "{err}");
}

#[test]
fn schema_violations_are_descriptive() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"dim": 3, "x": [0.0, 0.0]}"#);
    let o = exitlab(&["calibrate", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("x has 2 coordinates"));
    let cfg = write_config(dir.path(), r#"{"domain": {"kind": "cube", "side": 1.0}}"#);
    let o = exitlab(&["calibrate", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_seed_defaults_to_zero_and_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = exitlab(&["verify-identities", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let echo: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("verify-identities.config.json")).unwrap()).unwrap();
    assert_eq!(echo["seed"], 0);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("verify-identities.json")).unwrap()).unwrap();
    assert_eq!(summary["config"]["seed"], 0);
    assert_eq!(summary["passed"], true);
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"seed": 5, "replicas": 3000, "eps_mass": 0.01}"#);
    let out = dir.path().join("out");
    let o = exitlab(&["calibrate", "--config", &cfg, "--seed", "9", "--replicas", "2000", "--out", out.to_str().unwrap()]);
    assert!(o.status.code().is_some_and(|c| c == 0 || c == 1), "{}", String::from_utf8_lossy(&o.stderr));
    let echo: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("calibrate.config.json")).unwrap()).unwrap();
    assert_eq!(echo["seed"], 9);
    assert_eq!(echo["replicas"], 2000);
    assert_eq!(echo["eps_mass"], 0.01);
}

#[test]
fn outputs_do_not_depend_on_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"replicas": 5000, "aux_replicas": 50, "lambdas": [1.0]}"#);
    let mut csvs = Vec::new();
    for threads in ["1", "4"] {
        let out = dir.path().join(format!("t{threads}"));
        let o = exitlab(&["cross-validate", "--config", &cfg, "--threads", threads, "--out", out.to_str().unwrap()]);
        assert!(o.status.code().is_some_and(|c| c == 0 || c == 1), "{}", String::from_utf8_lossy(&o.stderr));
        csvs.push((
            std::fs::read(out.join("cross-validate.csv")).unwrap(),
            std::fs::read(out.join("cross-validate_replicas.csv")).unwrap(),
        ));
    }
    assert_eq!(csvs[0], csvs[1]);
}

#[test]
fn every_experiment_is_a_subcommand() {
    let o = exitlab(&["--help"]);
    let help = String::from_utf8_lossy(&o.stdout);
    for name in [
        "verify-identities",
        "calibrate",
        "cross-validate",
        "verify-loglaplace",
        "verify-martingale",
        "verify-backbone",
        "asymptotics",
        "forest",
    ] {
        assert!(help.contains(name), "{name} missing from help");
    }
    assert!(!exitlab(&["no-such-experiment"]).status.success());
}
