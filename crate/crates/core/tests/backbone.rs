use exitmeasure::backbone::*;
use exitmeasure::diffusion::{Killing, PathConfig, TransformSpec, Walker};
use exitmeasure::geometry::{DomainModel, Point};
use exitmeasure::martingales::{htransform_laplace, htransform_term, MartingaleSpec};
use exitmeasure::partitions::{enumerate_partitions, SubsetId};
use exitmeasure::pde::vfamily::{build_vfamily, CacheOptions, GridSpec, SingletonKind, VFamily};
use exitmeasure::pde::radial::{boundary_value_profile, RadialSolution};
use exitmeasure::pde::{radial_blowup, FieldSymmetry, NonlinearField, ZeroField};
use exitmeasure::rng::{par_replicas, stream, tag};
use exitmeasure::stats::{mean_se, z_score, EstimatorKind, EstimatorResult};
use exitmeasure::superprocess::ReplicaSettings;
use exitmeasure::Level;
use std::sync::Arc;

fn p(xs: &[f64]) -> Point {
    Point::from_slice(xs)
}

fn family(dom: &DomainModel, targets: &[Point], kind: SingletonKind, h: f64) -> VFamily {
    let spec = GridSpec { h, ..Default::default() };
    build_vfamily(dom, &Point::zeros(dom.dim), targets, Arc::new(ZeroField), kind, &spec, &CacheOptions::default()).unwrap()
}

fn antipodal(d: usize) -> VFamily {
    let dom = DomainModel::unit_ball(d).unwrap();
    family(&dom, &[Point::axis(d, 0, 1.0), Point::axis(d, 0, -1.0)], SingletonKind::Martin, 0.02)
}

#[test]
fn single_target_backbone_is_one_exit() {
    let d = 4;
    let dom = DomainModel::unit_ball(d).unwrap();
    let z = Point::axis(d, 1, 1.0);
    let vf = family(&dom, &[z], SingletonKind::Martin, 0.02);
    let mut near = 0;
    for r in 0..200 {
        let mut rng = stream(1, tag("single"), r);
        let t = sample_backbone(&vf, &p(&[0.2, 0.0, 0.1, 0.0]), &PathConfig::default(), &mut rng).unwrap();
        assert_eq!(t.node_count(), 1);
        assert_eq!(t.interior_deaths(), 0);
        assert!(matches!(t.nodes[0].end, NodeEnd::BoundaryExit { .. }));
        assert!((t.nodes[0].end.point().norm() - 1.0).abs() < 1e-9);
        if t.nodes[0].end.point().dist(&z) < 0.2 {
            near += 1;
        }
    }
    assert!(near > 150, "{near} of 200 exits near the target");
}

#[test]
fn pair_backbone_structure_and_split_symmetry() {
    let d = 4;
    let vf = antipodal(d);
    let cfg = PathConfig::default();
    let n = 4000;
    let trees = par_replicas(n, 2, tag("pair"), |_, rng| sample_backbone(&vf, &Point::zeros(d), &cfg, rng).unwrap());
    let mut first_is_one = 0;
    let (mut leaves_near, mut leaves_total) = (0, 0);
    for t in &trees {
        assert_eq!(t.node_count(), 3);
        assert_eq!(t.interior_deaths(), 1);
        t.check().unwrap();
        let leaves: Vec<String> = t.leaves().map(|(_, b)| b.label.to_string()).collect();
        assert_eq!(leaves.len(), 2);
        let (l, _) = t.nodes[0].children.unwrap();
        if t.nodes[l].label == SubsetId::singleton(1, 2).unwrap() {
            first_is_one += 1;
        }
        for (_, leaf) in t.leaves() {
            let i = leaf.label.min_elem().unwrap();
            leaves_total += 1;
            if leaf.end.point().dist(&vf.targets[i - 1]) < 0.1 {
                leaves_near += 1;
            }
        }
        let parts: Vec<_> = (1..=4).map(|k| classify_partition(t, &vf.dom, Level::Sub(k)).unwrap()).collect();
        for w in parts.windows(2) {
            assert!(refines(&w[1], &w[0]), "{} then {}", w[0], w[1]);
        }
    }
    assert!(leaves_near as f64 > 0.98 * leaves_total as f64, "{leaves_near} of {leaves_total} leaves near their target");
    let f = first_is_one as f64 / n as f64;
    let se = (0.25 / n as f64).sqrt();
    assert!((f - 0.5).abs() < 3.0 * se, "split frequency {f}");
    let pr = split_probabilities(&vf, vf.full(), &p(&[0.3, 0.2, 0.0, 0.1]));
    assert!(pr.iter().all(|(_, q)| (q - 0.5).abs() < 1e-12));
}

#[test]
fn partition_follows_the_root_death() {
    let d = 4;
    let vf = antipodal(d);
    let cfg = PathConfig::default();
    let ball = vf.dom.ball_at(Level::Sub(1)).unwrap();
    let mut counts = [0, 0, 0];
    for r in 0..1000 {
        let mut rng = stream(3, tag("classify"), r);
        let t = sample_backbone(&vf, &Point::zeros(d), &cfg, &mut rng).unwrap();
        let sigma = classify_partition(&t, &vf.dom, Level::Sub(1)).unwrap();
        let root = &t.nodes[0];
        let left = root.path.positions.iter().any(|y| !ball.contains(y));
        if left {
            assert_eq!(sigma.len(), 1, "root left D_1, got {sigma}");
            counts[0] += 1;
        } else if sigma.len() == 2 {
            assert!(ball.contains(&root.end.point()));
            counts[1] += 1;
        } else {
            // A bridge excursion out of D_1 between two inside positions.
            counts[2] += 1;
        }
    }
    println!("{counts:?}");
    assert!(counts[0] > 0 && counts[1] > 0, "{counts:?}");
    assert!(counts[2] < 100, "{counts:?}");

    let small = vf.dom.clone().with_schedule(vec![0.02, 0.5]).unwrap();
    let mut whole = 0;
    for r in 0..300 {
        let mut rng = stream(4, tag("classify"), r);
        let t = sample_backbone(&vf, &Point::zeros(d), &cfg, &mut rng).unwrap();
        if classify_partition(&t, &small, Level::Sub(1)).unwrap().len() == 1 {
            whole += 1;
        }
    }
    assert!(whole >= 295, "{whole} of 300");
}

/// For three targets the first split follows `p(A, N)` at the death point.
#[test]
fn triple_backbone_split_law() {
    let d = 3;
    let dom = DomainModel::unit_ball(d).unwrap();
    let s = 0.5f64.sqrt();
    let targets = [p(&[1.0, 0.0, 0.0]), p(&[0.0, 1.0, 0.0]), p(&[-s, -s, 0.0])];
    let vf = family(&dom, &targets, SingletonKind::Martin, 0.05);
    let cfg = PathConfig::default();
    let n = 3000;
    let trees = par_replicas(n, 5, tag("triple"), |_, rng| sample_backbone(&vf, &p(&[0.0, 0.0, 0.2]), &cfg, rng).unwrap());
    let subsets = vf.full().proper_nonempty_subsets();
    let mut observed = vec![0.0; subsets.len()];
    let mut expected = vec![0.0; subsets.len()];
    for t in &trees {
        assert_eq!(t.node_count(), 5);
        assert_eq!(t.interior_deaths(), 2);
        let (l, _) = t.nodes[0].children.unwrap();
        let y = t.nodes[0].end.point();
        for (a, q) in split_probabilities(&vf, vf.full(), &y) {
            let i = subsets.iter().position(|b| *b == a).unwrap();
            expected[i] += q;
            if t.nodes[l].label == a {
                observed[i] += 1.0;
            }
        }
    }
    let chi2: f64 = observed.iter().zip(&expected).map(|(o, e)| (o - e) * (o - e) / e).sum();
    println!("observed {observed:?} expected {expected:?} chi2 {chi2:.2}");
    // 1% level with 5 degrees of freedom.
    assert!(chi2 < 15.09, "chi2 = {chi2}");
}

/// With `h ≡ 1` the backbone is Brownian motion and `E⟨Y^k,1⟩ = 4 E_x τ_k`.
#[test]
fn immigration_first_moment_and_eps_refinement() {
    let d = 3;
    let dom = DomainModel::unit_ball(d).unwrap();
    let vf = family(&dom, &[Point::axis(d, 0, 1.0)], SingletonKind::Radial, 0.02);
    let x = p(&[0.1, 0.0, 0.2]);
    let k = Level::Sub(1);
    let rk = dom.level_radius(k).unwrap();
    let target = 4.0 * (rk * rk - x.norm2()) / d as f64;
    let cfg = PathConfig::default();
    let mut means = Vec::new();
    for (eps, seed) in [(2e-3, 1), (1e-3, 2)] {
        let res = backbone_laplace(&vf, k, &x, &[0.0], &ReplicaSettings::new(20_000, eps, seed), &cfg).unwrap();
        let mass: Vec<f64> = res.summaries.iter().map(|s| s.total_mass).collect();
        let time: Vec<f64> = res.summaries.iter().map(|s| s.inside_time).collect();
        let (m, se) = mean_se(&mass);
        let (tm, _) = mean_se(&time);
        println!("ε = {eps}: E<Y,1> = {m:.4} ± {se:.4}, 4 E τ = {:.4} (sampled {:.4})", target, 4.0 * tm);
        assert!(((m - target) / se).abs() < 3.0, "ε = {eps}: {m} vs {target}");
        assert_eq!(res.totals[0].value, 1.0);
        assert_eq!(res.totals[0].se, 0.0);
        means.push((m, se));
    }
    assert!(z_score(means[0].0, means[0].1, means[1].0, means[1].1).abs() < 3.0);
}

#[test]
fn lineage_outside_contributes_nothing() {
    let d = 3;
    let dom = DomainModel::unit_ball(d).unwrap();
    let vf = family(&dom, &[Point::axis(d, 0, 1.0)], SingletonKind::Radial, 0.02);
    let mut rng = stream(0, tag("outside"), 0);
    let tree = sample_backbone(&vf, &p(&[0.7, 0.0, 0.0]), &PathConfig::default(), &mut rng).unwrap();
    let run = immigrate(tree, &vf, Level::Sub(1), 1e-3, 1_000_000, &PathConfig::default(), &mut rng).unwrap();
    assert_eq!(run.seeds, 0);
    assert_eq!(run.y.total_mass(), 0.0);
    assert_eq!(run.inside_time, 0.0);
}

#[derive(Debug)]
struct Radial(RadialSolution, Point);

impl NonlinearField for Radial {
    fn name(&self) -> &'static str {
        "w"
    }
    fn value(&self, x: &Point) -> f64 {
        self.0.value(x.dist(&self.1))
    }
    fn symmetry(&self) -> FieldSymmetry {
        FieldSymmetry::Radial { center: self.1 }
    }
}

/// Laplace functional of `Y^k` against the conditioned side computed by the
/// Palm recursion, for one target.
#[test]
fn laplace_single_target_matches_palm_side() {
    let d = 4;
    let dom = DomainModel::unit_ball(d).unwrap();
    let vf = family(&dom, &[Point::axis(d, 0, 1.0)], SingletonKind::Martin, 0.02);
    let k = Level::Sub(1);
    let x = Point::zeros(d);
    let cfg = PathConfig::default();
    let lambdas = [0.0, 1.0, 3.0];
    let res = backbone_laplace(&vf, k, &x, &lambdas, &ReplicaSettings::new(20_000, 1e-3, 7), &cfg).unwrap();
    assert_eq!(res.totals[0].value, 1.0);
    assert!(res.totals[1].value > res.totals[2].value);
    let spec = MartingaleSpec::new(vf.full(), &vf, k).unwrap();
    let h = htransform_laplace(&spec, &x, 1.0, 20_000, &cfg, 8).unwrap();
    let z = res.totals[1].z_against(&h.total);
    println!("backbone {:.4} ± {:.4}, palm {:.4} ± {:.4}", res.totals[1].value, res.totals[1].se, h.total.value, h.total.se);
    assert!(z.abs() < 3.5, "z = {z}");

    // The same quantity as E^h_x exp(-∫4w_λ) along the Martin-transformed path.
    let w = Radial(boundary_value_profile(d, dom.level_radius(k).unwrap(), 1.0).unwrap(), Point::zeros(d));
    let mut walker = Walker::new(dom.ball_at(k).unwrap(), TransformSpec::HarmonicH(vf.singleton(1).as_ref()), Killing::Weight(&w), cfg);
    walker.cap = cfg.dt;
    let vals = par_replicas(50_000, 12, tag("h-path"), |_, rng| walker.sample(&x, rng).unwrap().log_weight.exp());
    let (m, se) = mean_se(&vals);
    let z = res.totals[1].z_against(&EstimatorResult::new(m, se, vals.len(), EstimatorKind::Direct));
    println!("h-path oracle {m:.4} ± {se:.4}");
    assert!(z.abs() < 3.5, "z = {z}");
}

/// Two targets: total and per-partition Laplace functionals.
#[test]
fn laplace_pair_matches_palm_side_by_partition() {
    let d = 4;
    let vf = antipodal(d);
    let k = Level::Sub(1);
    let x = Point::zeros(d);
    let cfg = PathConfig::default();
    let lambda = 1.0;
    let res = backbone_laplace(&vf, k, &x, &[lambda], &ReplicaSettings::new(10_000, 1e-3, 9), &cfg).unwrap();
    assert!(res.summaries.iter().all(|s| s.node_count == 3 && s.interior_deaths == 1 && s.refines));
    let spec = MartingaleSpec::new(vf.full(), &vf, k).unwrap();
    for sigma in enumerate_partitions(vf.full()).unwrap() {
        let term = htransform_term(&spec, &sigma, &x, lambda, 4000, &cfg, 10).unwrap();
        let (_, b) = res.by_partition[0].iter().find(|(s, _)| *s == sigma.to_string()).unwrap();
        let z = b.z_against(&term.estimate);
        println!("{sigma}: backbone {:.4} ± {:.4}, palm {:.4} ± {:.4}", b.value, b.se, term.estimate.value, term.estimate.se);
        assert!(z.abs() < 3.5, "{sigma}: z = {z}");
    }
}

#[test]
fn pruned_immigration_carries_less_mass() {
    let d = 3;
    let dom = DomainModel::unit_ball(d).unwrap();
    let g: Arc<dyn NonlinearField> = Arc::new(radial_blowup(d, 1.0).unwrap());
    let vf = build_vfamily(
        &dom,
        &Point::zeros(d),
        &[Point::axis(d, 0, 1.0)],
        g,
        SingletonKind::Radial,
        &GridSpec::default(),
        &CacheOptions::default(),
    )
    .unwrap();
    let plain = family(&dom, &[Point::axis(d, 0, 1.0)], SingletonKind::Radial, 0.02);
    let x = Point::zeros(d);
    let k = Level::Sub(2);
    let cfg = PathConfig::default();
    let a = backbone_laplace(&vf, k, &x, &[1.0], &ReplicaSettings::new(3000, 2e-3, 11), &cfg).unwrap();
    let b = backbone_laplace(&plain, k, &x, &[1.0], &ReplicaSettings::new(3000, 2e-3, 11), &cfg).unwrap();
    let ma = mean_se(&a.summaries.iter().map(|s| s.total_mass).collect::<Vec<_>>());
    let mb = mean_se(&b.summaries.iter().map(|s| s.total_mass).collect::<Vec<_>>());
    println!("pruned {ma:?} plain {mb:?}");
    assert!(ma.0 < mb.0);
    assert!(a.totals[0].value > b.totals[0].value);
}
