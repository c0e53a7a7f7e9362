use super::{family, Experiment};
use crate::config::{Atom, ExperimentConfig};
use crate::report::{num, Records, Report, Row};
use anyhow::{bail, Result};
use exitmeasure::conditioning::{forest_partition_weights, forest_sample};
use exitmeasure::rng::{par_replicas, tag};
use exitmeasure::stats::{mean_se, EstimatorKind, EstimatorResult};
use exitmeasure::superprocess::ReplicaSettings;
use exitmeasure::{Level, Point};

pub struct Forest;

const CRITERION: &str = "forest-law";

impl Experiment for Forest {
    fn name(&self) -> &'static str {
        "forest"
    }

    fn about(&self) -> &'static str {
        "Exit measures conditioned from a finitely-atomic initial measure: ancestral partitions, free mass and backbone mass"
    }

    fn defaults(&self) -> ExperimentConfig {
        ExperimentConfig {
            dim: 4,
            x: vec![0.0; 4],
            y: vec![0.0; 4],
            targets: vec![vec![1.0, 0.0, 0.0, 0.0], vec![-1.0, 0.0, 0.0, 0.0]],
            mu: vec![
                Atom { point: vec![0.2, 0.0, 0.0, 0.0], weight: 1.0 },
                Atom { point: vec![-0.1, 0.2, 0.0, 0.0], weight: 1.0 },
            ],
            replicas: 5000,
            levels: vec![1],
            ..Default::default()
        }
    }

    fn run(&self, cfg: &ExperimentConfig) -> Result<Report> {
        if cfg.targets.is_empty() || cfg.targets.len() > 2 {
            bail!("forest takes one or two targets, got {}", cfg.targets.len());
        }
        if cfg.mu.is_empty() {
            bail!("forest needs an initial measure mu");
        }
        let &[k] = cfg.levels.as_slice() else {
            bail!("forest takes a single level");
        };
        let dom = cfg.domain_model()?;
        let vf = family(cfg, &dom, &cfg.target_points())?;
        if !vf.g().is_zero() {
            bail!("forest compares the free mass with mu(1), which needs g = \"zero\"");
        }
        let mu: Vec<(Point, f64)> = cfg.mu.iter().map(|a| (Point::from_slice(&a.point), a.weight)).collect();
        let level = Level::Sub(k);
        let pcfg = cfg.path_config();
        let cap = ReplicaSettings::new(cfg.replicas, cfg.eps_mass, cfg.seed).population_cap;
        let draws = par_replicas(cfg.replicas, cfg.seed, tag("forest"), |_, rng| {
            forest_sample(&vf, &mu, level, cfg.eps_mass, cap, &pcfg, rng)
        });
        let draws = draws.into_iter().collect::<exitmeasure::Result<Vec<_>>>()?;
        let n = draws.len() as f64;
        let mut rep = Report::new(self.name(), cfg);
        rep.criteria.push(CRITERION.into());

        for (sigma, w) in forest_partition_weights(&vf, &mu)? {
            let hits = draws.iter().filter(|d| d.gamma == sigma).count() as f64;
            let f = hits / n;
            let est = EstimatorResult::new(f, (w * (1.0 - w) / n).sqrt(), draws.len(), EstimatorKind::Direct);
            rep.push(Row::z_exact(&format!("{CRITERION}/partition-frequency"), format!("gamma={sigma}"), &est, w, 3.0));
        }

        let total_mu: f64 = mu.iter().map(|(_, w)| w).sum();
        let free: Vec<f64> = draws.iter().map(|d| d.free_mass).collect();
        let (m, se) = mean_se(&free);
        let est = EstimatorResult::new(m, se, free.len(), EstimatorKind::Direct);
        rep.push(Row::z_exact(&format!("{CRITERION}/free-mass"), "<X_0,1> vs mu(1)", &est, total_mu, 3.0));

        let diff: Vec<f64> = draws.iter().map(|d| d.backbone_mass - 4.0 * d.inside_time).collect();
        let (m, se) = mean_se(&diff);
        let est = EstimatorResult::new(m, se, diff.len(), EstimatorKind::Direct);
        rep.push(Row::z_exact(&format!("{CRITERION}/backbone-mass"), "<X_B,1> - 4 time inside", &est, 0.0, 3.0));

        let mut rec = Records {
            header: ["replica", "gamma", "starts", "free_mass", "backbone_mass", "inside_time"].map(String::from).to_vec(),
            rows: Vec::new(),
        };
        for (r, d) in draws.iter().enumerate() {
            let starts: Vec<String> = d.starts.iter().map(|(b, j)| format!("{b}@{}", j + 1)).collect();
            rec.rows.push(vec![
                r.to_string(),
                d.gamma.to_string(),
                starts.join(" "),
                num(d.free_mass),
                num(d.backbone_mass),
                num(d.inside_time),
            ]);
        }
        rep.replicas = Some(rec);
        Ok(rep)
    }
}
