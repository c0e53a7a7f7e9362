use exitmeasure::diffusion::{Killing, PathConfig, Terminal, TransformSpec, Walker};
use exitmeasure::geometry::{DomainModel, Point};
use exitmeasure::martingales::*;
use exitmeasure::partitions::SubsetId;
use exitmeasure::pde::radial::{boundary_value_profile, RadialSolution};
use exitmeasure::pde::vfamily::{build_vfamily, CacheOptions, GridSpec, SingletonKind, VFamily};
use exitmeasure::pde::{radial_blowup, FieldSymmetry, NonlinearField, ZeroField};
use exitmeasure::rng::{par_replicas, stream, tag};
use exitmeasure::stats::{mean_se, z_score};
use exitmeasure::superprocess::{ExitMeasureSample, ReplicaSettings};
use exitmeasure::{Error, Level};
use std::sync::Arc;

fn p(xs: &[f64]) -> Point {
    Point::from_slice(xs)
}

fn antipodal(d: usize) -> VFamily {
    let dom = DomainModel::unit_ball(d).unwrap();
    let targets = [Point::axis(d, 0, 1.0), Point::axis(d, 0, -1.0)];
    build_vfamily(
        &dom,
        &Point::zeros(d),
        &targets,
        Arc::new(ZeroField),
        SingletonKind::Martin,
        &GridSpec::default(),
        &CacheOptions::default(),
    )
    .unwrap()
}

fn set_partitions(elems: &[usize]) -> Vec<Vec<Vec<usize>>> {
    let Some((&first, rest)) = elems.split_first() else {
        return vec![vec![]];
    };
    let mut out = Vec::new();
    for sub in set_partitions(rest) {
        let mut alone = sub.clone();
        alone.push(vec![first]);
        out.push(alone);
        for i in 0..sub.len() {
            let mut joined = sub.clone();
            joined[i].push(first);
            out.push(joined);
        }
    }
    out
}

fn sample_on(level_radius: f64, d: usize, atoms: usize, mass: f64, seed: u64) -> ExitMeasureSample {
    let mut rng = stream(seed, tag("atoms"), 0);
    let atoms = (0..atoms).map(|_| Point::uniform_direction(d, &mut rng) * level_radius).collect();
    ExitMeasureSample { atoms, mass, level: Level::Sub(1), replica: 0, seed }
}

#[test]
fn eval_matches_brute_force_partition_sum() {
    let d = 4;
    let vf = antipodal(d);
    let r = vf.dom.level_radius(Level::Sub(2)).unwrap();
    for seed in 0..5 {
        let xs = sample_on(r, d, 1 + seed as usize * 7, 0.01, seed);
        for a in vf.full().nonempty_subsets() {
            let spec = MartingaleSpec::new(a, &vf, Level::Sub(2)).unwrap();
            let m = eval_M(&spec, &xs);
            let mut brute = 0.0;
            for sigma in set_partitions(&a.elems()) {
                let mut prod = 1.0;
                for block in sigma {
                    let c = SubsetId::from_elems(&block, vf.n()).unwrap();
                    prod *= xs.integrate(&|y: &Point| vf.value(c, y));
                }
                brute += prod;
            }
            assert!((m - brute).abs() <= 1e-12 * brute.abs(), "{a}: {m} vs {brute}");
        }
    }
}

#[test]
fn eval_small_cases() {
    let d = 4;
    let vf = antipodal(d);
    let k = Level::Sub(1);
    let empty = ExitMeasureSample { atoms: vec![], mass: 0.01, level: k, replica: 0, seed: 0 };
    for a in vf.full().nonempty_subsets() {
        assert_eq!(eval_M(&MartingaleSpec::new(a, &vf, k).unwrap(), &empty), 0.0);
    }
    let xs = sample_on(vf.dom.level_radius(k).unwrap(), d, 5, 0.01, 9);
    let s1 = SubsetId::singleton(1, 2).unwrap();
    let s2 = SubsetId::singleton(2, 2).unwrap();
    let s12 = vf.full();
    let x1 = xs.integrate(&|y: &Point| vf.value(s1, y));
    let x2 = xs.integrate(&|y: &Point| vf.value(s2, y));
    let x12 = xs.integrate(&|y: &Point| vf.value(s12, y));
    assert_eq!(eval_M(&MartingaleSpec::new(s1, &vf, k).unwrap(), &xs), x1);
    let m = eval_M(&MartingaleSpec::new(s12, &vf, k).unwrap(), &xs);
    assert!((m - (x1 * x2 + x12)).abs() < 1e-12 * m);
}

#[test]
fn spec_rejects_bad_inputs() {
    let vf = antipodal(4);
    assert!(matches!(MartingaleSpec::new(SubsetId::EMPTY, &vf, Level::Sub(1)), Err(Error::InvalidSubset(_))));
    assert!(MartingaleSpec::new(SubsetId::full(3).unwrap(), &vf, Level::Sub(1)).is_err());
    assert!(MartingaleSpec::new(vf.full(), &vf, Level::Outer).is_err());
    assert!(MartingaleSpec::new(vf.full(), &vf, Level::Sub(9)).is_err());
}

/// `N_x(M_k^A) = v^A(x)` at the base point for every `A`, and at two levels.
#[test]
fn excursion_mean_of_martingale_is_v() {
    let d = 4;
    let vf = antipodal(d);
    let x0 = Point::zeros(d);
    let cfg = PathConfig::default();
    for k in [1, 2] {
        for (i, a) in vf.full().nonempty_subsets().into_iter().enumerate() {
            let spec = MartingaleSpec::new(a, &vf, Level::Sub(k)).unwrap();
            let set = ReplicaSettings::new(200_000, 2e-3, 10 * k as u64 + i as u64);
            let est = estimate_NM(&spec, &x0, &set, &cfg).unwrap();
            let target = vf.value(a, &x0);
            let z = est.z_against_value(target);
            println!("k={k} A={a}: {:.4} ± {:.4} vs {:.4} (z = {z:.2})", est.value, est.se, target);
            assert!(z.abs() < 3.5, "k={k} A={a}: z = {z}");
        }
    }
}

#[test]
fn mean_of_martingale_is_constant_across_levels() {
    let d = 4;
    let vf = antipodal(d);
    let x = p(&[0.2, 0.1, 0.0, 0.0]);
    let cfg = PathConfig::default();
    let spec1 = MartingaleSpec::new(vf.full(), &vf, Level::Sub(1)).unwrap();
    let spec2 = MartingaleSpec::new(vf.full(), &vf, Level::Sub(2)).unwrap();
    let e1 = estimate_NM(&spec1, &x, &ReplicaSettings::new(150_000, 2e-3, 3), &cfg).unwrap();
    let e2 = estimate_NM(&spec2, &x, &ReplicaSettings::new(150_000, 2e-3, 4), &cfg).unwrap();
    let z = e1.z_against(&e2);
    println!("k=1 {:.4} ± {:.4}, k=2 {:.4} ± {:.4}", e1.value, e1.se, e2.value, e2.se);
    assert!(z.abs() < 3.5, "z = {z}");
}

/// With the exact radial solution `g` that blows up on `∂D`, the singleton
/// family is `L_{4g}`-harmonic and `N_x(e^{-⟨X^k,g⟩}⟨X^k,v⟩) = v(x)`.
#[test]
fn weighted_mean_with_exact_g() {
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
    let x = p(&[0.1, 0.0, 0.0]);
    let spec = MartingaleSpec::new(vf.full(), &vf, Level::Sub(2)).unwrap();
    let est = estimate_NM(&spec, &x, &ReplicaSettings::new(100_000, 2e-3, 5), &PathConfig::default()).unwrap();
    let target = vf.value(vf.full(), &x);
    let z = est.z_against_value(target);
    println!("{:.4} ± {:.4} vs {target:.4}", est.value, est.se);
    assert!(z.abs() < 3.5, "z = {z}");
    assert!(matches!(
        htransform_laplace(&spec, &x, 1.0, 10, &PathConfig::default(), 0),
        Err(Error::Unsupported(_))
    ));
    assert_eq!(htransform_laplace(&spec, &x, 0.0, 10, &PathConfig::default(), 0).unwrap().total.value, 1.0);
}

#[derive(Debug)]
struct Radial(RadialSolution, Point);

impl NonlinearField for Radial {
    fn name(&self) -> &'static str {
        "w"
    }
    fn value(&self, x: &Point) -> f64 {
        self.0.value(x.norm())
    }
    fn symmetry(&self) -> FieldSymmetry {
        FieldSymmetry::Radial { center: self.1 }
    }
}

/// For one target the conditioned Laplace functional is
/// `E_x[v(B_τ) exp(-∫4w_λ)] / v(x)`; the oracle kills paths at rate `4w_λ`.
#[test]
fn htransform_single_target_matches_killed_brownian_motion() {
    let d = 4;
    let dom = DomainModel::unit_ball(d).unwrap();
    let vf = build_vfamily(
        &dom,
        &Point::zeros(d),
        &[Point::axis(d, 1, 1.0)],
        Arc::new(ZeroField),
        SingletonKind::Martin,
        &GridSpec::default(),
        &CacheOptions::default(),
    )
    .unwrap();
    let k = Level::Sub(1);
    let x = p(&[0.1, 0.05, 0.0, 0.0]);
    let cfg = PathConfig::default();
    let spec = MartingaleSpec::new(vf.full(), &vf, k).unwrap();
    assert_eq!(htransform_laplace(&spec, &x, 0.0, 10, &cfg, 0).unwrap().total.value, 1.0);
    let lambda = 1.0;
    let h = htransform_laplace(&spec, &x, lambda, 40_000, &cfg, 1).unwrap();
    assert_eq!(h.terms.len(), 1);

    let radius = dom.level_radius(k).unwrap();
    let w = Radial(boundary_value_profile(d, radius, lambda).unwrap(), Point::zeros(d));
    let mut walker = Walker::new(dom.ball_at(k).unwrap(), TransformSpec::Plain, Killing::Thin(&w), PathConfig::with_dt(1e-4, d));
    walker.cap = 1e-4;
    let a = vf.full();
    let vals = par_replicas(40_000, 2, tag("oracle"), |_, rng| match walker.sample(&x, rng).unwrap().terminal {
        Terminal::ExitAt { point, .. } => vf.value(a, &point),
        _ => 0.0,
    });
    let (m, se) = mean_se(&vals);
    let vx = vf.value(a, &x);
    let z = z_score(h.total.value, h.total.se, m / vx, se / vx);
    println!("palm {:.4} ± {:.4}, killed BM {:.4} ± {:.4}", h.total.value, h.total.se, m / vx, se / vx);
    assert!(z.abs() < 3.5, "z = {z}");
    assert!(h.total.value < 1.0);
}

#[test]
fn htransform_pair_decreases_in_lambda() {
    let d = 4;
    let vf = antipodal(d);
    let spec = MartingaleSpec::new(vf.full(), &vf, Level::Sub(1)).unwrap();
    let x = Point::zeros(d);
    let cfg = PathConfig::default();
    let a = htransform_laplace(&spec, &x, 0.5, 3000, &cfg, 7).unwrap();
    let b = htransform_laplace(&spec, &x, 2.0, 3000, &cfg, 7).unwrap();
    assert_eq!(a.terms.len(), 2);
    let sum: f64 = a.terms.iter().map(|t| t.estimate.value).sum();
    assert!((sum - a.total.value).abs() < 1e-12);
    println!("λ=0.5 {:.4} ± {:.4}; λ=2 {:.4} ± {:.4}", a.total.value, a.total.se, b.total.value, b.total.se);
    assert!(a.total.value < 1.0 + 3.0 * a.total.se);
    assert!(b.total.value < a.total.value);
}

#[test]
fn regression_between_levels_is_near_identity() {
    let d = 4;
    let vf = antipodal(d);
    let spec = MartingaleSpec::new(SubsetId::singleton(1, 2).unwrap(), &vf, Level::Sub(1)).unwrap();
    let set = ReplicaSettings::new(20_000, 0.05, 11);
    let r = martingale_regression(&spec, &Point::zeros(d), &set, &PathConfig::default()).unwrap();
    println!("{r:?}");
    assert!(r.active > 100);
    assert!((r.slope - 1.0).abs() < 3.5 * r.slope_se, "slope {}", r.slope);
    assert!(r.intercept.abs() < 3.5 * r.intercept_se, "intercept {}", r.intercept);
}
