use super::Experiment;
use crate::config::ExperimentConfig;
use crate::report::{Report, Row};
use anyhow::{bail, Result};
use exitmeasure::geometry::expected_exit_time;
use exitmeasure::partitions::SubsetId;
use exitmeasure::superprocess::{excursion_cumulants, ReplicaSettings};
use exitmeasure::{Level, Point};

pub struct Calibrate;

const CRITERION: &str = "branching-calibration";

impl Experiment for Calibrate {
    fn name(&self) -> &'static str {
        "calibrate"
    }

    fn about(&self) -> &'static str {
        "First and second excursion moments of the total exit mass against 1 and 4 E_x(tau)"
    }

    fn defaults(&self) -> ExperimentConfig {
        ExperimentConfig { replicas: 20_000_000, ..Default::default() }
    }

    fn run(&self, cfg: &ExperimentConfig) -> Result<Report> {
        if cfg.g != "zero" {
            bail!("calibrate runs without killing; g must be \"zero\"");
        }
        let dom = cfg.domain_model()?;
        let x = cfg.x_point();
        let mut rep = Report::new(self.name(), cfg);
        rep.criteria.push(CRITERION.into());
        let one = |_: &Point| 1.0;
        let set = ReplicaSettings::new(cfg.replicas, cfg.eps_mass, cfg.seed);
        let cum = excursion_cumulants(&dom, Level::Outer, &x, &[&one, &one], 0.0, &set, &cfg.path_config())?;
        let first = cum.get(SubsetId::full(1)?).expect("order one present");
        let second = cum.joint();
        let tau = expected_exit_time(&dom, &x)?;
        rep.push(Row::z_exact(&format!("{CRITERION}/first-moment"), "N<X,1>", first, 1.0, 3.0));
        rep.push(Row::relative(&format!("{CRITERION}/second-moment"), "N<X,1>^2 vs 4E tau", second, 4.0 * tau, 0.05));
        rep.push(
            Row::info("diagnostic/second-moment-z", "N<X,1>^2 vs 4E tau", second.value, second.se)
                .with_reference(4.0 * tau, 0.0)
                .with_stat(second.z_against_value(4.0 * tau)),
        );
        rep.push(Row::info("diagnostic/flagged", "population cap", cum.flagged as f64, 0.0));
        Ok(rep)
    }
}
