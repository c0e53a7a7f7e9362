use super::{set_label, Experiment};
use crate::config::ExperimentConfig;
use crate::report::{Records, Report, Row};
use anyhow::{bail, Result};
use exitmeasure::conditioning::{
    bracket_check, caps, conditioned_laplace_at_eps, martin_ratio, sample_hits, scan_caps, scan_from_sample,
    MARTIN_TOLERANCE, MAX_BRACKET_REL_SE, MIN_CONDITIONED_HITS,
};
use exitmeasure::geometry::{validate_targets, BoundaryTarget};
use exitmeasure::partitions::SubsetId;
use exitmeasure::superprocess::ReplicaSettings;
use exitmeasure::Level;

pub struct Asymptotics;

const CRITERION: &str = "small-cap-asymptotics";

impl Experiment for Asymptotics {
    fn name(&self) -> &'static str {
        "asymptotics"
    }

    fn about(&self) -> &'static str {
        "Hit-all and hit-any estimates over shrinking caps: inclusion-exclusion, the harmonic bracket and the Martin ratio"
    }

    fn defaults(&self) -> ExperimentConfig {
        ExperimentConfig {
            dim: 4,
            x: vec![0.0; 4],
            y: vec![0.5, 0.0, 0.0, 0.0],
            targets: vec![vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0, 0.0]],
            eps_list: vec![0.4, 0.2, 0.1],
            eps_mass: 1e-3,
            replicas: 5_000_000,
            aux_replicas: 1_000_000,
            ..Default::default()
        }
    }

    fn run(&self, cfg: &ExperimentConfig) -> Result<Report> {
        let centers = cfg.target_points();
        let (nt, ne) = (centers.len(), cfg.eps_list.len());
        if nt == 0 || ne == 0 {
            bail!("asymptotics needs targets and an eps_list");
        }
        if nt * ne > 16 {
            bail!("at most 16 caps per run, got {} targets times {} radii", nt, ne);
        }
        let dom = cfg.domain_model()?;
        let x = cfg.x_point();
        let pcfg = cfg.path_config();
        for &eps in &cfg.eps_list {
            validate_targets(&dom, &caps(&centers, eps), true)?;
        }
        let mut rep = Report::new(self.name(), cfg);
        rep.criteria.push(CRITERION.into());

        // Cap index t*ne + j is target t at radius eps_list[j].
        let targets: Vec<BoundaryTarget> = (0..nt * ne)
            .map(|i| BoundaryTarget { center: centers[i / ne], eps: cfg.eps_list[i % ne], index: i + 1 })
            .collect();
        let set = ReplicaSettings::new(cfg.replicas, cfg.eps_mass, cfg.seed);
        let sample = sample_hits(&dom, &x, &targets, &set, &pcfg)?;
        let total = nt * ne;
        let mut rec = Records {
            header: ["eps", "subset", "hits_all", "v", "v_se", "hits_any", "u", "u_se"].map(String::from).to_vec(),
            rows: Vec::new(),
        };
        for (j, &eps) in cfg.eps_list.iter().enumerate() {
            for a in SubsetId::full(nt)?.nonempty_subsets() {
                let elems: Vec<usize> = a.elems().into_iter().map(|t| (t - 1) * ne + j + 1).collect();
                let b = SubsetId::from_elems(&elems, total)?;
                let (ha, hy) = (sample.count_all(b), sample.count_any(b));
                let (v, u) = (sample.invert(ha), sample.invert(hy));
                let label = format!("A={} eps={eps}", set_label(a));
                rep.push(Row::info("estimate/hit-all", label.clone(), v.value, v.se).with_stat(ha as f64));
                rep.push(Row::info("estimate/hit-any", label.clone(), u.value, u.se).with_stat(hy as f64));
                rec.rows.push(vec![
                    eps.to_string(),
                    set_label(a),
                    ha.to_string(),
                    v.value.to_string(),
                    v.se.to_string(),
                    hy.to_string(),
                    u.value.to_string(),
                    u.se.to_string(),
                ]);
                if a.len() < 2 {
                    continue;
                }
                let ie = sample.inclusion_exclusion(b);
                rep.push(
                    Row::info(&format!("{CRITERION}/inclusion-exclusion"), label, ie.direct, ie.diff_se)
                        .with_reference(ie.combined, 0.0)
                        .with_stat(ie.z)
                        .gated(ie.z.abs() < 3.0),
                );
            }
        }
        rep.push(Row::info("diagnostic/flagged", "population cap", sample.flagged.len() as f64, 0.0));

        let mut scans = Vec::new();
        for t in 0..nt {
            let idx: Vec<usize> = (t * ne..(t + 1) * ne).collect();
            let scan = scan_from_sample(&sample, &x, &idx)?;
            let br = bracket_check(&dom, &scan)?;
            for r in &br.rows {
                let label = format!("target={} eps={}", t + 1, r.eps);
                rep.push(Row::info("bracket/rho", label, r.rho, r.rho_se).with_reference(r.harmonic, 0.0).with_stat(r.hits as f64));
            }
            for (q, w) in br.ratios.iter().zip(br.rows.iter().filter(|r| !r.excluded).collect::<Vec<_>>().windows(2)) {
                rep.push(Row::info("bracket/ratio", format!("target={} eps={} over {}", t + 1, w[0].eps, w[1].eps), *q, f64::NAN));
            }
            rep.push(Row::info("bracket/scaling-exponent", format!("target={}", t + 1), br.scaling_exponent, f64::NAN));
            let kept = br.rows.iter().filter(|r| !r.excluded).count();
            rep.push(
                Row::flag(&format!("{CRITERION}/bracket-stable"), format!("target={}", t + 1), br.stable)
                    .with_stat(kept as f64),
            );
            scans.push(scan);
        }

        let y = cfg.y_point();
        let yset = ReplicaSettings::new(cfg.aux_replicas, cfg.eps_mass, cfg.seed.wrapping_add(1));
        let at_y = scan_caps(&dom, &y, &centers[0], &cfg.eps_list, &yset, &pcfg)?;
        let mr = martin_ratio(&dom, &scans[0], &at_y)?;
        let feasible = |j: usize| {
            let (vx, vy) = (scans[0].v[j], at_y.v[j]);
            mr.rows[j].hits_x >= MIN_CONDITIONED_HITS
                && mr.rows[j].hits_y >= MIN_CONDITIONED_HITS
                && vx.se / vx.value <= MAX_BRACKET_REL_SE
                && vy.se / vy.value <= MAX_BRACKET_REL_SE
        };
        for (j, r) in mr.rows.iter().enumerate() {
            let label = format!("eps={}", r.eps);
            rep.push(
                Row::info("martin/ratio", label, r.ratio, r.ratio_se)
                    .with_reference(mr.kernel, 0.0)
                    .with_stat(r.ratio / mr.kernel - 1.0),
            );
            if !feasible(j) {
                rep.note(format!("Martin ratio at eps={} has too few hits to gate", r.eps));
            }
        }
        match (0..ne).rev().find(|&j| feasible(j)) {
            Some(j) => {
                let r = &mr.rows[j];
                let dev = r.ratio / mr.kernel - 1.0;
                rep.push(
                    Row::info(&format!("{CRITERION}/martin-ratio"), format!("eps={}", r.eps), r.ratio, r.ratio_se)
                        .with_reference(mr.kernel, 0.0)
                        .with_stat(dev)
                        .gated(dev.abs() < MARTIN_TOLERANCE),
                );
            }
            None => rep.push(Row::flag(&format!("{CRITERION}/martin-ratio"), "no feasible eps", false)),
        }

        if !cfg.lambdas.is_empty() && nt >= 2 {
            let k = cfg.levels.first().copied().unwrap_or(1);
            let cset = ReplicaSettings::new(cfg.aux_replicas, cfg.eps_mass, cfg.seed.wrapping_add(2));
            let cl = conditioned_laplace_at_eps(&dom, &x, &centers[..2], cfg.eps_list[0], &cfg.lambdas, Level::Sub(k), &cset, &pcfg)?;
            for (l, v) in cl.lambdas.iter().zip(&cl.values) {
                let label = format!("eps={} k={k} lambda={l}", cfg.eps_list[0]);
                rep.push(Row::info("conditioned/laplace", label, v.value, v.se).with_stat(cl.hits as f64));
            }
            if cl.flagged {
                rep.note(format!("conditioned Laplace used {} hits; standard errors doubled", cl.hits));
            }
        }
        rep.replicas = Some(rec);
        Ok(rep)
    }
}
