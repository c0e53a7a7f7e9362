use super::Experiment;
use crate::config::{DomainSpec, ExperimentConfig};
use crate::report::{Report, Row};
use anyhow::{bail, Result};
use exitmeasure::pde::build_field;
use exitmeasure::superprocess::{log_laplace_check, ReplicaSettings};
use exitmeasure::Level;

pub struct VerifyLogLaplace;

const CRITERION: &str = "log-laplace";

impl Experiment for VerifyLogLaplace {
    fn name(&self) -> &'static str {
        "verify-loglaplace"
    }

    fn about(&self) -> &'static str {
        "-log E exp(-<X^k, g>)/eps against g(x) for an exact solution g, at several levels k"
    }

    fn defaults(&self) -> ExperimentConfig {
        ExperimentConfig {
            domain: DomainSpec::HalfSpaceCap { height: 1.0, radius: 0.8 },
            x: vec![0.0, 0.0, 1.0],
            g: "half-space".into(),
            eps_mass: 0.002,
            replicas: 2_000_000,
            levels: vec![1, 2],
            ..Default::default()
        }
    }

    fn run(&self, cfg: &ExperimentConfig) -> Result<Report> {
        if cfg.levels.len() < 2 {
            bail!("verify-loglaplace needs at least two levels");
        }
        let dom = cfg.domain_model()?;
        let g = build_field(&cfg.g, &dom)?;
        if g.is_zero() {
            bail!("verify-loglaplace needs a nonzero field g");
        }
        let x = cfg.x_point();
        let exact = g.value(&x);
        let mut rep = Report::new(self.name(), cfg);
        rep.criteria.push(CRITERION.into());
        let mut ests = Vec::new();
        for (i, &k) in cfg.levels.iter().enumerate() {
            let set = ReplicaSettings::new(cfg.replicas, cfg.eps_mass, cfg.seed.wrapping_add(i as u64));
            let est = log_laplace_check(&dom, Level::Sub(k), &x, g.as_ref(), &set, &cfg.path_config())?;
            rep.push(Row::z_exact(&format!("{CRITERION}/against-g"), format!("k={k}"), &est, exact, 3.0));
            ests.push((k, est));
        }
        for w in ests.windows(2) {
            let ((k0, a), (k1, b)) = (&w[0], &w[1]);
            rep.push(Row::z(&format!("{CRITERION}/level-constancy"), format!("k={k0} vs k={k1}"), a, b, 3.0));
        }
        Ok(rep)
    }
}
