use super::{family, Experiment};
use crate::config::ExperimentConfig;
use crate::report::{num, Records, Report, Row};
use anyhow::{bail, Result};
use exitmeasure::backbone::backbone_laplace;
use exitmeasure::martingales::{htransform_laplace, MartingaleSpec};
use exitmeasure::partitions::SubsetId;
use exitmeasure::stats::{EstimatorKind, EstimatorResult};
use exitmeasure::superprocess::ReplicaSettings;
use exitmeasure::Level;

pub struct VerifyBackbone;

const LAPLACE: &str = "conditioned-laplace";
const STRUCTURE: &str = "backbone-structure";

impl Experiment for VerifyBackbone {
    fn name(&self) -> &'static str {
        "verify-backbone"
    }

    fn about(&self) -> &'static str {
        "Laplace functionals of the backbone construction against the h-transform side, plus backbone tree structure"
    }

    fn defaults(&self) -> ExperimentConfig {
        ExperimentConfig {
            dim: 4,
            x: vec![0.0; 4],
            y: vec![0.0; 4],
            targets: vec![vec![1.0, 0.0, 0.0, 0.0], vec![-1.0, 0.0, 0.0, 0.0]],
            lambdas: vec![0.0, 0.5, 1.0, 2.0],
            replicas: 20_000,
            aux_replicas: 20_000,
            levels: vec![1],
            ..Default::default()
        }
    }

    fn run(&self, cfg: &ExperimentConfig) -> Result<Report> {
        if cfg.targets.is_empty() || cfg.targets.len() > 2 {
            bail!("verify-backbone takes one or two targets, got {}", cfg.targets.len());
        }
        let &[k] = cfg.levels.as_slice() else {
            bail!("verify-backbone takes a single level");
        };
        let dom = cfg.domain_model()?;
        let x = cfg.x_point();
        let level = Level::Sub(k);
        let pcfg = cfg.path_config();
        let mut rep = Report::new(self.name(), cfg);
        rep.criteria.push(LAPLACE.into());
        rep.criteria.push(STRUCTURE.into());
        let mut rec = Records {
            header: ["n", "replica", "partition", "total_mass", "node_count", "interior_deaths", "leaves_cover", "refines", "first_split", "inside_time"]
                .map(String::from)
                .to_vec(),
            rows: Vec::new(),
        };
        let all = cfg.target_points();
        for n in 1..=all.len() {
            let vf = family(cfg, &dom, &all[..n])?;
            let set = ReplicaSettings::new(cfg.replicas, cfg.eps_mass, cfg.seed.wrapping_add(n as u64));
            let bb = backbone_laplace(&vf, level, &x, &cfg.lambdas, &set, &pcfg)?;
            let spec = MartingaleSpec::new(vf.full(), &vf, level)?;
            for (i, &lambda) in cfg.lambdas.iter().enumerate() {
                let seed = cfg.seed.wrapping_add(1000 * n as u64 + i as u64);
                let h = htransform_laplace(&spec, &x, lambda, cfg.aux_replicas, &pcfg, seed)?;
                let total = &bb.totals[i];
                if lambda == 0.0 {
                    let exact = total.value == 1.0 && total.se == 0.0 && h.total.value == 1.0 && h.total.se == 0.0;
                    rep.push(Row::flag(&format!("{LAPLACE}/zero-tilt"), format!("n={n}"), exact));
                    continue;
                }
                rep.push(Row::z(&format!("{LAPLACE}/total"), format!("n={n} lambda={lambda}"), total, &h.total, 3.0));
                if n < 2 {
                    continue;
                }
                for term in &h.terms {
                    let (_, b) = bb.by_partition[i]
                        .iter()
                        .find(|(s, _)| *s == term.partition)
                        .expect("every partition is tabulated");
                    let label = format!("n={n} lambda={lambda} sigma={}", term.partition);
                    rep.push(Row::z(&format!("{LAPLACE}/by-partition"), label, b, &term.estimate, 3.0));
                }
            }

            let s = &bb.summaries;
            let count = |f: &dyn Fn(&exitmeasure::backbone::BackboneSummary) -> bool| s.iter().filter(|r| f(r)).count();
            let total = s.len() as f64;
            let check = |name: &str, good: usize| {
                Row::flag(&format!("{STRUCTURE}/{name}"), format!("n={n}"), good == s.len()).with_stat(good as f64 / total)
            };
            rep.push(check("node-count", count(&|r| r.node_count == 2 * n - 1)));
            rep.push(check("interior-deaths", count(&|r| r.interior_deaths == n - 1)));
            rep.push(check("leaf-labels", count(&|r| r.leaves_cover)));
            rep.push(check("refinement", count(&|r| r.refines)));
            if n == 2 {
                let first = SubsetId::singleton(1, 2)?.to_string();
                let hits = count(&|r| r.first_split.as_deref() == Some(first.as_str()));
                let f = hits as f64 / total;
                let est = EstimatorResult::new(f, (0.25 / total).sqrt(), s.len(), EstimatorKind::Direct);
                rep.push(Row::z_exact(&format!("{STRUCTURE}/split-frequency"), format!("n={n}"), &est, 0.5, 3.0));
            }
            rep.push(Row::info("diagnostic/aborted", format!("n={n}"), bb.aborted.len() as f64, 0.0));
            for r in s {
                rec.rows.push(vec![
                    n.to_string(),
                    r.replica.to_string(),
                    r.partition.clone(),
                    num(r.total_mass),
                    r.node_count.to_string(),
                    r.interior_deaths.to_string(),
                    r.leaves_cover.to_string(),
                    r.refines.to_string(),
                    r.first_split.clone().unwrap_or_default(),
                    num(r.inside_time),
                ]);
            }
        }
        rep.replicas = Some(rec);
        Ok(rep)
    }
}
