use super::{family, set_label, Experiment};
use crate::config::ExperimentConfig;
use crate::report::{Report, Row};
use anyhow::{bail, Result};
use exitmeasure::martingales::{estimate_NM, MartingaleSpec};
use exitmeasure::stats::{EstimatorKind, EstimatorResult};
use exitmeasure::superprocess::ReplicaSettings;
use exitmeasure::Level;

pub struct VerifyMartingale;

const CRITERION: &str = "martingale-mean";

impl Experiment for VerifyMartingale {
    fn name(&self) -> &'static str {
        "verify-martingale"
    }

    fn about(&self) -> &'static str {
        "Excursion means of the partition martingales against v^A(x), and their constancy across levels"
    }

    fn defaults(&self) -> ExperimentConfig {
        ExperimentConfig {
            dim: 4,
            x: vec![0.0; 4],
            y: vec![0.0; 4],
            targets: vec![vec![1.0, 0.0, 0.0, 0.0], vec![-1.0, 0.0, 0.0, 0.0]],
            eps_mass: 2e-3,
            replicas: 1_000_000,
            levels: vec![1, 2],
            ..Default::default()
        }
    }

    fn run(&self, cfg: &ExperimentConfig) -> Result<Report> {
        if cfg.targets.is_empty() {
            bail!("verify-martingale needs at least one target");
        }
        let dom = cfg.domain_model()?;
        let vf = family(cfg, &dom, &cfg.target_points())?;
        let x = cfg.x_point();
        let mut rep = Report::new(self.name(), cfg);
        rep.criteria.push(CRITERION.into());
        let mut stream_id = 0u64;
        for a in vf.full().nonempty_subsets() {
            let target = vf.value(a, &x);
            let exact = EstimatorResult::exact(target, EstimatorKind::Quadrature);
            let mut by_level = Vec::new();
            for &k in &cfg.levels {
                let spec = MartingaleSpec::new(a, &vf, Level::Sub(k))?;
                let set = ReplicaSettings::new(cfg.replicas, cfg.eps_mass, cfg.seed.wrapping_add(stream_id));
                stream_id += 1;
                let est = estimate_NM(&spec, &x, &set, &cfg.path_config())?;
                let label = format!("A={} k={k}", set_label(a));
                rep.push(Row::z(&format!("{CRITERION}/against-v"), label, &est, &exact, 3.0));
                by_level.push((k, est));
            }
            for w in by_level.windows(2) {
                let ((k0, e0), (k1, e1)) = (&w[0], &w[1]);
                let label = format!("A={} k={k0} vs k={k1}", set_label(a));
                rep.push(Row::z(&format!("{CRITERION}/level-constancy"), label, e0, e1, 3.0));
            }
        }
        Ok(rep)
    }
}
