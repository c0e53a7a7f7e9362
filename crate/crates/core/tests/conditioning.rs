use exitmeasure::backbone::sample_backbone_from;
use exitmeasure::conditioning::*;
use exitmeasure::diffusion::PathConfig;
use exitmeasure::geometry::{harmonic_measure_cap, martin_kernel, sample_exit, BoundaryTarget, DomainModel, Point};
use exitmeasure::partitions::SubsetId;
use exitmeasure::pde::radial::blowup_profile;
use exitmeasure::pde::vfamily::{build_vfamily, CacheOptions, GridSpec, SingletonKind, VFamily};
use exitmeasure::pde::ZeroField;
use exitmeasure::rng::{par_replicas, stream, tag};
use exitmeasure::stats::{mean_se, z_score};
use exitmeasure::superprocess::{ReplicaSettings, POPULATION_CAP};
use exitmeasure::{Error, Level};
use std::sync::Arc;

fn p(xs: &[f64]) -> Point {
    Point::from_slice(xs)
}

fn family(dom: &DomainModel, targets: &[Point]) -> VFamily {
    let spec = GridSpec { h: 0.05, ..Default::default() };
    build_vfamily(dom, &Point::zeros(dom.dim), targets, Arc::new(ZeroField), SingletonKind::Martin, &spec, &CacheOptions::default())
        .unwrap()
}

#[test]
fn inversion_of_hit_counts() {
    let targets = caps(&[Point::axis(4, 0, 1.0)], 0.1);
    let s = HitSample { targets, masks: vec![vec![]; 1000], flagged: vec![], eps_mass: 0.01 };
    let v = s.invert(0);
    assert!(v.upper_bound_only && v.se.is_nan());
    assert!((v.value - 20.0f64.ln() / 10.0).abs() < 1e-12);
    let v = s.invert(100);
    assert!((v.value - -(0.9f64).ln() / 0.01).abs() < 1e-12);
    assert!((v.se - (0.09f64 / 1000.0).sqrt() / (0.9 * 0.01)).abs() < 1e-12);
    let e = s.estimates().unwrap();
    assert_eq!(e.len(), 1);
    assert_eq!(e[0].hits_all, 0);
    assert!(e[0].v.upper_bound_only);
}

#[test]
fn inclusion_exclusion_error_is_floored_without_split_replicas() {
    let targets = caps(&[Point::axis(3, 0, 1.0), Point::axis(3, 0, -1.0)], 0.3);
    let n = 100_000;
    let mut masks = vec![vec![]; n];
    for r in 0..5 {
        masks[r] = vec![0b01];
        masks[n - 1 - r] = vec![0b10];
    }
    let s = HitSample { targets, masks, flagged: vec![], eps_mass: 1e-3 };
    let ie = s.inclusion_exclusion(SubsetId::full(2).unwrap());
    let mu = -(1.0 - 10.0 / n as f64).ln();
    let floor = (n as f64 * (1.0 - (-mu).exp() * (1.0 + mu))).sqrt() / (n as f64 * 1e-3);
    assert!(ie.diff_se >= floor * (1.0 - 1e-12), "{} vs floor {floor}", ie.diff_se);
    assert!(ie.z.abs() < 0.1, "{ie:?}");

    let mut split = s.clone();
    split.masks[1000] = vec![0b01, 0b10];
    let ie = split.inclusion_exclusion(SubsetId::full(2).unwrap());
    assert!(ie.diff_se > 0.0 && ie.z.abs() < 3.0, "{ie:?}");
}

#[test]
fn masks_give_matched_counts() {
    let targets = caps(&[Point::axis(3, 0, 1.0), Point::axis(3, 0, -1.0), Point::axis(3, 1, 1.0)], 0.3);
    let masks = vec![vec![0b011], vec![0b001, 0b010], vec![0b100], vec![], vec![0b111]];
    let s = HitSample { targets, masks, flagged: vec![], eps_mass: 0.1 };
    let a12 = SubsetId::from_elems(&[1, 2], 3).unwrap();
    assert_eq!(s.count_all(a12), 2);
    assert_eq!(s.count_any(a12), 3);
    for a in SubsetId::full(3).unwrap().nonempty_subsets() {
        for b in a.nonempty_subsets() {
            assert!(s.count_all(a) <= s.count_all(b));
            assert!(s.count_any(b) <= s.count_any(a));
        }
    }
}

#[test]
fn hit_estimates_reject_bad_caps() {
    let dom = DomainModel::unit_ball(4).unwrap();
    let set = ReplicaSettings::new(10, 0.01, 0);
    let cfg = PathConfig::default();
    let x = Point::zeros(4);
    let close = [Point::axis(4, 0, 1.0), p(&[0.8, 0.6, 0.0, 0.0])];
    assert!(matches!(estimate_hits(&dom, &x, &close, 0.4, &set, &cfg), Err(Error::DegenerateTarget(_))));
    let off = [p(&[0.5, 0.0, 0.0, 0.0])];
    assert!(matches!(estimate_hits(&dom, &x, &off, 0.1, &set, &cfg), Err(Error::DegenerateTarget(_))));
    let z = [Point::axis(4, 0, 1.0)];
    assert!(estimate_hits(&dom, &p(&[1.2, 0.0, 0.0, 0.0]), &z, 0.1, &set, &cfg).is_err());
}

#[test]
fn covering_cap_recovers_the_extinction_solution() {
    let d = 3;
    let dom = DomainModel::unit_ball(d).unwrap();
    let x = Point::zeros(d);
    let set = ReplicaSettings::new(600_000, 2.5e-4, 11);
    let (sample, est) = estimate_hits(&dom, &x, &[Point::axis(d, 1, 1.0)], 2.5, &set, &PathConfig::default()).unwrap();
    let exact = blowup_profile(d, 1.0).unwrap().value(0.0);
    let u = est[0].u;
    println!("N_0(X^D ≠ 0): {:.4} ± {:.4}, exact {exact:.4}, hits {}", u.value, u.se, est[0].hits_any);
    assert!(((u.value - exact) / u.se).abs() < 3.0);
    let p_hat = est[0].hits_any as f64 / sample.replicas() as f64;
    assert!((p_hat - (1.0 - (-set.eps_mass * u.value).exp())).abs() < 1e-12);
    assert_eq!(est[0].u, est[0].v);
}

#[test]
fn harmonic_measure_matches_exit_frequencies() {
    let d = 4;
    let dom = DomainModel::unit_ball(d).unwrap();
    let x = p(&[0.3, 0.2, 0.0, 0.1]);
    let n = 400_000;
    let exits = par_replicas(n, 5, tag("wos"), |_, rng| sample_exit(&dom.outer(), &x, rng));
    for eps in [0.4, 0.2] {
        let t = BoundaryTarget { center: Point::axis(d, 0, 1.0), eps, index: 1 };
        let m = harmonic_measure_cap(&dom, &x, &t).unwrap();
        let hits: Vec<f64> = exits.iter().map(|z| f64::from(u8::from(t.contains(z)))).collect();
        let (f, se) = mean_se(&hits);
        println!("ε = {eps}: quadrature {m:.5}, sampled {f:.5} ± {se:.5}");
        assert!(((f - m) / se).abs() < 3.0);
    }
}

#[test]
fn lemma_consistency_on_three_caps() {
    let d = 4;
    let dom = DomainModel::unit_ball(d).unwrap();
    let centers = [Point::axis(d, 0, 1.0), Point::axis(d, 1, 1.0), Point::axis(d, 2, 1.0)];
    let x = p(&[0.3, 0.3, 0.3, 0.0]);
    let set = ReplicaSettings::new(300_000, 2e-3, 21);
    let (sample, est) = estimate_hits(&dom, &x, &centers, 0.6, &set, &PathConfig::default()).unwrap();
    for e in &est {
        println!("{}: v {:.4} ± {:.4} ({} hits), u {:.4} ± {:.4}", e.a, e.v.value, e.v.se, e.hits_all, e.u.value, e.u.se);
        assert!(e.v.value >= 0.0 && e.u.value >= e.v.value);
    }
    let full = SubsetId::full(3).unwrap();
    for a in full.nonempty_subsets().into_iter().filter(|a| a.len() >= 2) {
        let ie = sample.inclusion_exclusion(a);
        println!("{a}: direct {:.4}, via u {:.4}, z {:.2}", ie.direct, ie.combined, ie.z);
        assert!(ie.z.abs() < 3.0);
        assert!(sample.count_all(a) > 0);
        for b in a.nonempty_subsets() {
            assert!(sample.count_all(a) <= sample.count_all(b));
        }
    }
}

#[test]
fn bracket_and_martin_ratio_structure() {
    let d = 4;
    let dom = DomainModel::unit_ball(d).unwrap();
    let z = Point::axis(d, 0, 1.0);
    let cfg = PathConfig::default();
    let set = ReplicaSettings::new(60_000, 1e-3, 31);
    let eps = [0.4, 0.2, 0.1];
    let x = Point::zeros(d);
    let at_x = scan_caps(&dom, &x, &z, &eps, &set, &cfg).unwrap();
    let again = scan_caps(&dom, &x, &z, &eps, &set, &cfg).unwrap();
    let same = martin_ratio(&dom, &at_x, &again).unwrap();
    assert!(same.rows.iter().all(|r| r.ratio == 1.0 && r.ratio_se == 0.0));
    assert_eq!(same.kernel, 1.0);
    for w in at_x.hits.windows(2) {
        assert!(w[1] <= w[0]);
    }
    let y = Point::axis(d, 0, 0.5);
    let at_y = scan_caps(&dom, &y, &z, &eps, &set, &cfg).unwrap();
    let rep = martin_ratio(&dom, &at_x, &at_y).unwrap();
    let k = martin_kernel(&dom, &x, &y, &z).unwrap();
    assert!((rep.kernel - k).abs() < 1e-12 && (k - 12.0).abs() < 1e-9);
    assert!(rep.rows[0].ratio > 1.0);
    let b = bracket_check(&dom, &at_x).unwrap();
    assert_eq!(b.rows.len(), 3);
    for r in &b.rows {
        let t = BoundaryTarget { center: z, eps: r.eps, index: 1 };
        assert_eq!(r.harmonic, harmonic_measure_cap(&dom, &x, &t).unwrap());
        if !r.excluded {
            assert!((r.rho - r.v.value * r.eps * r.eps / r.harmonic).abs() < 1e-12);
        }
    }
    assert_eq!(b.ratios.len(), b.rows.iter().filter(|r| !r.excluded).count().saturating_sub(1));
    let d3 = DomainModel::unit_ball(3).unwrap();
    let s3 = scan_caps(&d3, &Point::zeros(3), &Point::axis(3, 0, 1.0), &[0.4], &ReplicaSettings::new(10, 1e-2, 0), &cfg).unwrap();
    assert!(bracket_check(&d3, &s3).is_err());
    let mut odd = at_x.clone();
    odd.eps = vec![0.4, 0.3, 0.1];
    assert!(bracket_check(&dom, &odd).is_err());
}

#[test]
fn scans_share_one_run() {
    let d = 4;
    let dom = DomainModel::unit_ball(d).unwrap();
    let (z1, z2) = (Point::axis(d, 0, 1.0), Point::axis(d, 1, 1.0));
    let mut targets = caps(&[z1, z1], 0.4);
    targets[1].eps = 0.2;
    targets.extend(caps(&[z2], 0.4));
    let set = ReplicaSettings::new(20_000, 2e-3, 41);
    let x = Point::zeros(d);
    let sample = sample_hits(&dom, &x, &targets, &set, &PathConfig::default()).unwrap();
    let scan = scan_from_sample(&sample, &x, &[0, 1]).unwrap();
    assert_eq!(scan.eps, vec![0.4, 0.2]);
    assert_eq!(scan.hits[0], sample.count_all(SubsetId::singleton(1, 3).unwrap()));
    assert!(scan_from_sample(&sample, &x, &[0, 2]).is_err());
    assert!(scan_from_sample(&sample, &x, &[5]).is_err());
}

#[test]
fn conditioned_laplace_basics() {
    let d = 4;
    let dom = DomainModel::unit_ball(d).unwrap();
    let centers = [Point::axis(d, 0, 1.0), Point::axis(d, 1, 1.0)];
    let x = p(&[0.2, 0.2, 0.0, 0.0]);
    let cfg = PathConfig::default();
    let set = ReplicaSettings::new(200_000, 1e-2, 51);
    let r = conditioned_laplace_at_eps(&dom, &x, &centers, 0.6, &[0.0, 0.5, 2.0], Level::Sub(1), &set, &cfg).unwrap();
    println!("hits {}, values {:?}", r.hits, r.values.iter().map(|v| (v.value, v.se)).collect::<Vec<_>>());
    assert_eq!(r.values[0].value, 1.0);
    assert_eq!(r.values[0].se, 0.0);
    assert!(!r.flagged);
    assert!(r.values[1].value < 1.0 && r.values[2].value < r.values[1].value && r.values[2].value > 0.0);
    let few = conditioned_laplace_at_eps(&dom, &x, &centers, 0.6, &[1.0], Level::Sub(1), &ReplicaSettings::new(200, 1e-2, 52), &cfg)
        .unwrap();
    assert!(few.flagged);
    assert!(conditioned_laplace_at_eps(&dom, &x, &centers[..1], 0.6, &[1.0], Level::Sub(1), &set, &cfg).is_err());
    assert!(conditioned_laplace_at_eps(&dom, &x, &centers, 0.6, &[1.0], Level::Outer, &set, &cfg).is_err());
}

#[test]
fn forest_single_target_reduces_to_one_backbone() {
    let d = 3;
    let dom = DomainModel::unit_ball(d).unwrap();
    let vf = family(&dom, &[Point::axis(d, 0, 1.0)]);
    let x0 = p(&[0.1, 0.0, 0.0]);
    let w = forest_partition_weights(&vf, &[(x0, 1.0)]).unwrap();
    assert_eq!(w.len(), 1);
    assert!((w[0].1 - 1.0).abs() < 1e-15);
    for r in 0..20 {
        let mut rng = stream(61, tag("forest1"), r);
        let f = forest_sample(&vf, &[(x0, 1.0)], Level::Sub(1), 0.02, POPULATION_CAP, &PathConfig::default(), &mut rng).unwrap();
        assert_eq!(f.starts, vec![(vf.full(), 0)]);
        assert_eq!(f.gamma.len(), 1);
        assert!((f.free_mass + f.backbone_mass - f.exit.total_mass()).abs() < 1e-9);
    }
    assert!(matches!(
        forest_sample(&vf, &[(x0, 0.0)], Level::Sub(1), 0.02, POPULATION_CAP, &PathConfig::default(), &mut stream(0, 0, 0)),
        Err(Error::DegenerateTarget(_))
    ));
}

#[test]
fn sub_label_backbones_cover_their_block() {
    let d = 3;
    let dom = DomainModel::unit_ball(d).unwrap();
    let vf = family(&dom, &[Point::axis(d, 0, 1.0), Point::axis(d, 0, -1.0)]);
    let b = SubsetId::singleton(2, 2).unwrap();
    for r in 0..20 {
        let t = sample_backbone_from(&vf, b, &Point::zeros(d), &PathConfig::default(), &mut stream(62, tag("sub"), r)).unwrap();
        assert_eq!(t.root(), b);
        assert_eq!(t.node_count(), 1);
        t.check().unwrap();
    }
    let empty = SubsetId::EMPTY;
    assert!(sample_backbone_from(&vf, empty, &Point::zeros(d), &PathConfig::default(), &mut stream(0, 0, 0)).is_err());
}

#[test]
fn forest_partition_law_and_first_moment() {
    let d = 3;
    let dom = DomainModel::unit_ball(d).unwrap();
    let vf = family(&dom, &[Point::axis(d, 0, 1.0), Point::axis(d, 0, -1.0)]);
    let (a, b) = (p(&[0.3, 0.1, 0.0]), p(&[-0.2, 0.0, 0.2]));
    let mu = [(a, 1.0), (b, 1.0)];
    let (s1, s2, s12) = (SubsetId::singleton(1, 2).unwrap(), SubsetId::singleton(2, 2).unwrap(), vf.full());
    let whole = vf.value(s12, &a) + vf.value(s12, &b);
    let split = (vf.value(s1, &a) + vf.value(s1, &b)) * (vf.value(s2, &a) + vf.value(s2, &b));
    let p_whole = whole / (whole + split);
    let w = forest_partition_weights(&vf, &mu).unwrap();
    let listed = w.iter().find(|(s, _)| s.len() == 1).unwrap().1;
    assert!((listed - p_whole).abs() < 1e-12);
    let n = 1500;
    let cfg = PathConfig::default();
    let samples = par_replicas(n, 63, tag("forest2"), |_, rng| {
        forest_sample(&vf, &mu, Level::Sub(1), 0.02, POPULATION_CAP, &cfg, rng).unwrap()
    });
    let k = samples.iter().filter(|f| f.gamma.len() == 1).count() as f64;
    let se = (p_whole * (1.0 - p_whole) / n as f64).sqrt();
    println!("whole-block frequency {:.4}, expected {p_whole:.4} ± {se:.4}", k / n as f64);
    assert!(((k / n as f64 - p_whole) / se).abs() < 3.0);
    let free: Vec<f64> = samples.iter().map(|f| f.free_mass).collect();
    let (m, se) = mean_se(&free);
    println!("unconditioned part {m:.4} ± {se:.4}, expected 2");
    assert!(((m - 2.0) / se).abs() < 3.0);
    let bb: Vec<f64> = samples.iter().map(|f| f.backbone_mass).collect();
    let imm: Vec<f64> = samples.iter().map(|f| 4.0 * f.inside_time).collect();
    let diff: Vec<f64> = bb.iter().zip(&imm).map(|(x, y)| x - y).collect();
    let (dm, dse) = mean_se(&diff);
    let (bm, bse) = mean_se(&bb);
    let (im, ise) = mean_se(&imm);
    println!("backbone part {bm:.4} ± {bse:.4}, 4·inside time {im:.4} ± {ise:.4}, z {:.2}", z_score(bm, bse, im, ise));
    assert!((dm / dse).abs() < 3.0);
}
