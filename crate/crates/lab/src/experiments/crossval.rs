use super::Experiment;
use crate::config::ExperimentConfig;
use crate::report::{Records, Report, Row};
use anyhow::{bail, Result};
use exitmeasure::diffusion::PathConfig;
use exitmeasure::geometry::{harmonic_measure_cap, sample_exit, BoundaryTarget};
use exitmeasure::partitions::SubsetId;
use exitmeasure::rng::{par_replicas, stream, tag};
use exitmeasure::stats::{EstimatorKind, EstimatorResult};
use exitmeasure::superprocess::{excursion_cumulants, palm_recursion, ReplicaSettings};
use exitmeasure::{Level, Point};

pub struct CrossValidate;

const CRITERION: &str = "estimator-agreement";
const CAPS: usize = 20;

impl Experiment for CrossValidate {
    fn name(&self) -> &'static str {
        "cross-validate"
    }

    fn about(&self) -> &'static str {
        "Replica cumulants against the Palm recursion, and sampled exit positions against quadrature of the Poisson kernel"
    }

    fn defaults(&self) -> ExperimentConfig {
        ExperimentConfig {
            x: vec![0.0, 0.2, 0.0],
            targets: vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]],
            eps_list: vec![1.0],
            lambdas: vec![0.0, 1.0],
            eps_mass: 0.01,
            replicas: 600_000,
            aux_replicas: 12_000,
            ..Default::default()
        }
    }

    fn run(&self, cfg: &ExperimentConfig) -> Result<Report> {
        if cfg.targets.is_empty() || cfg.targets.len() > 2 {
            bail!("cross-validate takes one or two targets, got {}", cfg.targets.len());
        }
        let &[eps] = cfg.eps_list.as_slice() else {
            bail!("cross-validate takes a single cap radius in eps_list");
        };
        if cfg.lambdas.is_empty() {
            bail!("cross-validate needs at least one lambda");
        }
        let dom = cfg.domain_model()?;
        let x = cfg.x_point();
        let mut rep = Report::new(self.name(), cfg);
        rep.criteria.push(CRITERION.into());

        let caps: Vec<BoundaryTarget> = cfg
            .target_points()
            .into_iter()
            .enumerate()
            .map(|(i, center)| BoundaryTarget { center, eps, index: i + 1 })
            .collect();
        let indicators: Vec<Box<dyn Fn(&Point) -> f64 + Sync>> = caps
            .iter()
            .map(|c| {
                let c = *c;
                Box::new(move |z: &Point| f64::from(u8::from(c.contains(z)))) as Box<dyn Fn(&Point) -> f64 + Sync>
            })
            .collect();
        let psis: Vec<&(dyn Fn(&Point) -> f64 + Sync)> = indicators.iter().map(|f| f.as_ref()).collect();
        let n = psis.len();
        let set = ReplicaSettings::new(cfg.replicas, cfg.eps_mass, cfg.seed);
        let palm_cfg = PathConfig::with_dt(cfg.dt, cfg.dim);
        let check = format!("{CRITERION}/cumulant-vs-palm");
        for (li, &lambda) in cfg.lambdas.iter().enumerate() {
            let cum = excursion_cumulants(&dom, Level::Outer, &x, &psis, lambda, &set, &cfg.path_config())?;
            for a in SubsetId::full(n)?.nonempty_subsets() {
                let sel: Vec<_> = a.elems().into_iter().map(|i| psis[i - 1]).collect();
                let seed = cfg.seed.wrapping_add(((li as u64) << 16) | u64::from(a.bits()));
                let palm = palm_recursion(&dom, Level::Outer, &x, lambda, &sel, cfg.aux_replicas, &palm_cfg, seed)?;
                let est = cum.get(a).expect("all subsets estimated");
                rep.push(Row::z(&check, format!("A={a} lambda={lambda}"), est, &palm, 3.0));
            }
            rep.push(Row::info("diagnostic/flagged", format!("lambda={lambda}"), cum.flagged as f64, 0.0));
        }

        let mut crng = stream(cfg.seed, tag("cross-validate-caps"), 0);
        let ball = dom.outer();
        let test_caps: Vec<BoundaryTarget> = (0..CAPS)
            .map(|i| {
                let center = ball.center + Point::uniform_direction(cfg.dim, &mut crng) * ball.radius;
                let eps = ball.radius * (0.2 + 0.7 * i as f64 / (CAPS - 1) as f64);
                BoundaryTarget { center, eps, index: i + 1 }
            })
            .collect();
        let exits = par_replicas(cfg.replicas, cfg.seed, tag("cross-validate-exits"), |_, rng| sample_exit(&ball, &x, rng));
        let check = format!("{CRITERION}/exit-vs-quadrature");
        let mut rec = Records { header: vec!["cap".into(), "center".into(), "eps".into(), "hits".into()], rows: Vec::new() };
        for cap in &test_caps {
            let hits = exits.iter().filter(|z| cap.contains(z)).count();
            let f = hits as f64 / exits.len() as f64;
            let se = (f * (1.0 - f) / exits.len() as f64).sqrt();
            let est = EstimatorResult::new(f, se, exits.len(), EstimatorKind::Direct);
            let exact = harmonic_measure_cap(&dom, &x, cap)?;
            rep.push(Row::z_exact(&check, format!("cap={} eps={:.3}", cap.index, cap.eps), &est, exact, 3.0));
            let center: Vec<String> = cap.center.as_slice().iter().map(|c| format!("{c:.6}")).collect();
            rec.rows.push(vec![cap.index.to_string(), center.join(" "), format!("{}", cap.eps), hits.to_string()]);
        }
        rep.replicas = Some(rec);
        Ok(rep)
    }
}
