use exitlab::config::{Atom, ConfigFile, DomainSpec, ExperimentConfig, Overrides};
use exitlab::experiments::{Experiment, Registry};
use exitlab::report::{Records, Report, Row};
use exitmeasure::stats::{EstimatorKind, EstimatorResult};
use std::path::PathBuf;

fn est(value: f64, se: f64) -> EstimatorResult {
    EstimatorResult::new(value, se, 100, EstimatorKind::Direct)
}

#[test]
fn config_file_merges_over_defaults() {
    let file = ConfigFile::parse(
        r#"{"dim": 4, "x": [0,0,0,0], "y": [0.5,0,0,0], "domain": {"kind": "half-space-cap", "height": 2.0, "radius": 1.0},
            "mu": [{"point": [0.1,0,0,0], "weight": 2.0}]}"#,
    )
    .unwrap();
    let cfg = ExperimentConfig::default().merge(file);
    assert_eq!(cfg.dim, 4);
    assert_eq!(cfg.domain, DomainSpec::HalfSpaceCap { height: 2.0, radius: 1.0 });
    assert_eq!(cfg.mu, vec![Atom { point: vec![0.1, 0.0, 0.0, 0.0], weight: 2.0 }]);
    assert_eq!(cfg.seed, 0);
    assert_eq!(cfg.replicas, ExperimentConfig::default().replicas);
    cfg.validate().unwrap();
    assert!(cfg.domain_model().is_ok());
}

#[test]
fn config_rejects_unknown_and_invalid_fields() {
    assert!(ConfigFile::parse(r#"{"sead": 1}"#).is_err());
    assert!(ConfigFile::parse(r#"{"domain": {"kind": "ball", "radius": 1.0, "center": [0,0,0]}}"#).is_err());
    let bad = [
        ExperimentConfig { dim: 1, ..Default::default() },
        ExperimentConfig { eps_mass: 0.0, ..Default::default() },
        ExperimentConfig { dt: -1.0, ..Default::default() },
        ExperimentConfig { replicas: 1, ..Default::default() },
        ExperimentConfig { lambdas: vec![-1.0], ..Default::default() },
        ExperimentConfig { eps_list: vec![0.0], ..Default::default() },
        ExperimentConfig { levels: vec![0], ..Default::default() },
        ExperimentConfig { targets: vec![vec![1.0, 0.0]], ..Default::default() },
    ];
    for c in bad {
        assert!(c.validate().is_err(), "{c:?}");
    }
}

#[test]
fn overrides_take_precedence() {
    let file = ConfigFile::parse(r#"{"seed": 3, "replicas": 50, "dt": 0.001}"#).unwrap();
    let o = Overrides { seed: Some(7), out: Some(PathBuf::from("elsewhere")), ..Default::default() };
    let cfg = ExperimentConfig::default().merge(file).apply(&o);
    assert_eq!((cfg.seed, cfg.replicas, cfg.dt), (7, 50, 0.001));
    assert_eq!(cfg.out, PathBuf::from("elsewhere"));
    assert!(cfg.path_config().bdry_tol >= 3.0 * (3.0 * 0.001f64).sqrt());
}

#[test]
fn gates_group_rows_by_criterion() {
    let mut rep = Report::new("demo", &ExperimentConfig::default());
    rep.criteria = vec!["alpha".into(), "beta".into(), "gamma".into()];
    rep.push(Row::z_exact("alpha/one", "a", &est(1.0, 0.1), 1.1, 3.0));
    rep.push(Row::relative("alpha/two", "b", &est(1.0, 0.1), 1.02, 0.05));
    rep.push(Row::z("beta/one", "c", &est(1.0, 0.01), &est(2.0, 0.01), 3.0));
    rep.push(Row::info("diagnostic/x", "d", 5.0, 0.0));
    let gates = rep.gates();
    assert!(gates[0].pass && gates[0].rows == 2);
    assert!(!gates[1].pass && gates[1].failed == vec!["beta/one c".to_string()]);
    assert!(!gates[2].pass && gates[2].rows == 0);
    assert!(!rep.passed());
    rep.rows.retain(|r| !r.check.starts_with("beta"));
    rep.criteria.truncate(1);
    assert!(rep.passed());
}

#[test]
fn rows_compute_their_statistics() {
    let r = Row::z_exact("c", "l", &est(1.3, 0.1), 1.0, 3.0);
    assert!((r.stat - 3.0).abs() < 1e-12 && r.pass == Some(false));
    let r = Row::z("c", "l", &est(1.0, 0.0), &est(1.0, 0.0), 3.0);
    assert_eq!((r.stat, r.pass), (0.0, Some(true)));
    let r = Row::relative("c", "l", &est(1.04, 0.3), 1.0, 0.05);
    assert!((r.stat - 0.04).abs() < 1e-12 && r.pass == Some(true));
    assert_eq!(Row::flag("c", "l", false).estimate, 0.0);
    assert_eq!(Row::info("c", "l", 1.0, 0.0).gated(true).pass, Some(true));
}

#[test]
fn report_writes_all_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut rep = Report::new("demo", &ExperimentConfig::default());
    rep.criteria.push("alpha".into());
    rep.push(Row::flag("alpha/x", "label, with comma", true));
    rep.replicas = Some(Records { header: vec!["a".into(), "b".into()], rows: vec![vec!["1".into(), "2".into()]] });
    let files = rep.write(dir.path(), Some(1.5)).unwrap();
    assert_eq!(files.len(), 4);
    let csv = std::fs::read_to_string(dir.path().join("demo.csv")).unwrap();
    assert_eq!(csv.lines().nth(1).unwrap(), "alpha/x,\"label, with comma\",1,0,1,0,NaN,true");
    assert_eq!(std::fs::read_to_string(dir.path().join("demo_replicas.csv")).unwrap(), "a,b\n1,2\n");
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("demo.json")).unwrap()).unwrap();
    assert_eq!(summary["passed"], true);
    assert_eq!(summary["gates"][0]["name"], "alpha");
    assert_eq!(summary["elapsed_seconds"], 1.5);
}

struct Stub;

impl Experiment for Stub {
    fn name(&self) -> &'static str {
        "calibrate"
    }
    fn about(&self) -> &'static str {
        "stub"
    }
    fn defaults(&self) -> ExperimentConfig {
        ExperimentConfig::default()
    }
    fn run(&self, cfg: &ExperimentConfig) -> anyhow::Result<Report> {
        Ok(Report::new(self.name(), cfg))
    }
}

#[test]
fn registry_lists_and_replaces_entries() {
    let mut reg = Registry::standard();
    assert_eq!(
        reg.names(),
        vec!["verify-identities", "calibrate", "cross-validate", "verify-loglaplace", "verify-martingale", "verify-backbone", "asymptotics", "forest"]
    );
    for e in reg.iter() {
        e.defaults().validate().unwrap_or_else(|err| panic!("{}: {err}", e.name()));
    }
    reg.register(Box::new(Stub));
    assert_eq!(reg.names().len(), 8);
    assert_eq!(reg.get("calibrate").unwrap().about(), "stub");
    assert!(reg.run("calibrate", &ExperimentConfig::default()).unwrap().rows.is_empty());
    assert!(reg.run("nope", &ExperimentConfig::default()).is_err());
    assert!(reg.run("calibrate", &ExperimentConfig { replicas: 0, ..Default::default() }).is_err());
    assert!(Registry::empty().names().is_empty());
}

#[test]
fn identities_reject_out_of_range_sizes() {
    let reg = Registry::standard();
    for n in [0, 7] {
        assert!(reg.run("verify-identities", &ExperimentConfig { n, ..Default::default() }).is_err());
    }
    let rep = reg.run("verify-identities", &ExperimentConfig { n: 3, ..Default::default() }).unwrap();
    assert!(rep.passed());
    assert_eq!(rep.rows.iter().filter(|r| r.check.ends_with("bell-count")).count(), 8);
}

#[test]
fn small_forest_run_reports_every_partition() {
    let reg = Registry::standard();
    let cfg = ExperimentConfig { replicas: 40, ..reg.get("forest").unwrap().defaults() };
    let rep = reg.run("forest", &cfg).unwrap();
    let freq: Vec<_> = rep.rows.iter().filter(|r| r.check.ends_with("partition-frequency")).collect();
    assert_eq!(freq.len(), 2);
    assert!((freq.iter().map(|r| r.estimate).sum::<f64>() - 1.0).abs() < 1e-12);
    assert!((freq.iter().map(|r| r.reference).sum::<f64>() - 1.0).abs() < 1e-12);
    assert_eq!(rep.replicas.as_ref().unwrap().rows.len(), 40);
}

#[test]
fn experiments_reject_unsuitable_configs() {
    let reg = Registry::standard();
    let d = |name: &str| reg.get(name).unwrap().defaults();
    assert!(reg.run("calibrate", &ExperimentConfig { g: "half-space".into(), ..d("calibrate") }).is_err());
    assert!(reg.run("verify-loglaplace", &ExperimentConfig { levels: vec![1], ..d("verify-loglaplace") }).is_err());
    assert!(reg.run("verify-loglaplace", &ExperimentConfig { g: "zero".into(), ..d("verify-loglaplace") }).is_err());
    assert!(reg.run("cross-validate", &ExperimentConfig { eps_list: vec![0.5, 0.25], ..d("cross-validate") }).is_err());
    assert!(reg.run("verify-backbone", &ExperimentConfig { levels: vec![1, 2], ..d("verify-backbone") }).is_err());
    assert!(reg.run("asymptotics", &ExperimentConfig { eps_list: vec![], ..d("asymptotics") }).is_err());
    assert!(reg.run("asymptotics", &ExperimentConfig { eps_list: vec![0.9], replicas: 100, ..d("asymptotics") }).is_err());
    assert!(reg.run("forest", &ExperimentConfig { mu: vec![], ..d("forest") }).is_err());
}
