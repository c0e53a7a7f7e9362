use exitmeasure::diffusion::{sample_killed, PathConfig};
use exitmeasure::geometry::{harmonic_measure_cap, BoundaryTarget, DomainModel, Point};
use exitmeasure::partitions::SubsetId;
use exitmeasure::pde::radial::boundary_value_profile;
use exitmeasure::pde::{half_space_exact, ZeroField};
use exitmeasure::rng::{par_replicas, stream, tag};
use exitmeasure::stats::mean_se;
use exitmeasure::superprocess::*;
use exitmeasure::{Error, Level};

fn p(xs: &[f64]) -> Point {
    Point::from_slice(xs)
}

fn cfg() -> PathConfig {
    PathConfig::default()
}

/// Critical binary branching with rate `β` from one particle, in a ball too
/// large to be reached: `P(N_t = 0) = βt/(2 + βt)`, `E N_t = 1`, `Var N_t = βt`,
/// `E Σ|X_i - x|² = d t` and `E Σ_{i≠j} |X_i - X_j|² = β d t²`.
#[test]
fn branching_law_at_a_fixed_time() {
    let dom = DomainModel::ball(3, 100.0).unwrap();
    let eps = 0.02;
    let beta = 4.0 / eps;
    let t = 0.01;
    let x = p(&[0.5, -0.5, 0.0]);
    for macro_steps in [false, true] {
        let opts = EvolveOptions { horizon: t, macro_steps, ..Default::default() };
        let rows = par_replicas(100_000, 1, tag("fixed-time"), |_, rng| {
            let cloud = ParticleCloud::single(&x, eps).unwrap();
            let ev = evolve(&dom, Level::Outer, &cloud, &ZeroField, &opts, &cfg(), rng).unwrap();
            assert!(ev.exit.atoms.is_empty());
            let pts = &ev.alive.particles;
            let spread: f64 = pts.iter().map(|q| q.pos.dist(&x).powi(2)).sum();
            let mut pairs = 0.0;
            for a in pts {
                for b in pts {
                    pairs += a.pos.dist(&b.pos).powi(2);
                }
            }
            [pts.len() as f64, (pts.is_empty()) as u8 as f64, spread, pairs]
        });
        let col = |i: usize| -> (f64, f64) { mean_se(&rows.iter().map(|r| r[i]).collect::<Vec<_>>()) };
        let check = |name: &str, (m, se): (f64, f64), want: f64| {
            assert!((m - want).abs() < 3.5 * se, "macro {macro_steps}, {name}: {m} vs {want} (se {se})");
        };
        check("mean count", col(0), 1.0);
        check("extinction", col(1), beta * t / (2.0 + beta * t));
        check("spread", col(2), 3.0 * t);
        check("pairs", col(3), beta * 3.0 * t * t);
        let counts: Vec<f64> = rows.iter().map(|r| r[0]).collect();
        let (m, _) = mean_se(&counts);
        let var = counts.iter().map(|c| (c - m).powi(2)).sum::<f64>() / (counts.len() - 1) as f64;
        assert!((var - beta * t).abs() < 0.1 * beta * t, "macro {macro_steps}: var {var}");
    }
}

#[test]
fn criticality_and_first_moment() {
    let dom = DomainModel::unit_ball(3).unwrap();
    let eps = 0.01;
    let x = p(&[0.2, 0.0, -0.1]);
    let opts = EvolveOptions { horizon: 0.05, ..Default::default() };
    let mass = par_replicas(40_000, 2, tag("criticality"), |_, rng| {
        let cloud = ParticleCloud::single(&x, eps).unwrap();
        let ev = evolve(&dom, Level::Outer, &cloud, &ZeroField, &opts, &cfg(), rng).unwrap();
        (ev.alive.total_mass() + ev.exit.total_mass()) / eps
    });
    let (m, se) = mean_se(&mass);
    assert!((m - 1.0).abs() < 3.0 * se, "{m} ± {se}");

    let cap = BoundaryTarget { center: p(&[0.0, 0.0, -1.0]), eps: 0.8, index: 0 };
    let one = |_: &Point| 1.0;
    let ind = |z: &Point| cap.contains(z) as u8 as f64;
    let set = ReplicaSettings::new(100_000, eps, 3);
    let table = exit_functionals(&dom, Level::Outer, &x, &ZeroField, &[&one, &ind], &set, &cfg(), "first-moment").unwrap();
    assert!(table.flagged.is_empty());
    let (m1, se1) = mean_se(&table.column(0));
    assert!((m1 / eps - 1.0).abs() < 3.0 * se1 / eps);
    let (m2, se2) = mean_se(&table.column(1));
    let exact = harmonic_measure_cap(&dom, &x, &cap).unwrap();
    assert!((m2 / eps - exact).abs() < 3.0 * se2 / eps, "{} vs {exact}", m2 / eps);
}

#[test]
fn exit_atoms_lie_on_the_level() {
    let dom = DomainModel::unit_ball(4).unwrap();
    for (i, level) in [Level::Sub(1), Level::Sub(3), Level::Outer].into_iter().enumerate() {
        let r = dom.level_radius(level).unwrap();
        for rep in 0..50 {
            let s = exit_sample(&dom, level, &p(&[0.1, 0.0, 0.0, 0.2]), &ZeroField, 0.05, &cfg(), i as u64, rep).unwrap();
            assert_eq!(s.replica, rep);
            assert!((s.total_mass() - 0.05 * s.atoms.len() as f64).abs() < 1e-15);
            for a in &s.atoms {
                assert!((a.norm() - r).abs() < 1e-9);
            }
        }
    }
    let again = exit_sample(&dom, Level::Outer, &p(&[0.1, 0.0, 0.0, 0.2]), &ZeroField, 0.05, &cfg(), 2, 7).unwrap();
    let first = exit_sample(&dom, Level::Outer, &p(&[0.1, 0.0, 0.0, 0.2]), &ZeroField, 0.05, &cfg(), 2, 7).unwrap();
    assert_eq!(again, first);
}

#[test]
fn population_cap_aborts_replica() {
    let dom = DomainModel::unit_ball(3).unwrap();
    let cloud = ParticleCloud { particles: vec![Particle { pos: Point::zeros(3), lineage: 0 }; 5], mass: 1e-4, time: 0.0 };
    let opts = EvolveOptions { population_cap: 3, macro_steps: false, ..Default::default() };
    let mut rng = stream(4, 0, 0);
    assert!(matches!(
        evolve(&dom, Level::Outer, &cloud, &ZeroField, &opts, &cfg(), &mut rng),
        Err(Error::PopulationCap { cap: 3 })
    ));
    assert!(ParticleCloud::new(0.0).is_err());
}

#[test]
fn second_cumulant_pins_branching_rate() {
    let dom = DomainModel::unit_ball(3).unwrap();
    let one = |_: &Point| 1.0;
    let set = ReplicaSettings::new(200_000, 0.01, 5);
    let c = excursion_cumulants(&dom, Level::Outer, &Point::zeros(3), &[&one, &one], 0.0, &set, &cfg()).unwrap();
    let first = c.get(SubsetId::singleton(1, 2).unwrap()).unwrap();
    assert!(first.z_against_value(1.0).abs() < 3.0);
    let second = c.joint();
    assert!(second.z_against_value(4.0 / 3.0).abs() < 3.0, "{second:?}");
    assert!(excursion_cumulants(&dom, Level::Outer, &Point::zeros(3), &[&one as TestFn, &one, &one, &one], 0.0, &set, &cfg()).is_err());
}

#[test]
fn palm_recursion_closed_forms() {
    let dom = DomainModel::unit_ball(3).unwrap();
    let x = Point::zeros(3);
    let one = |_: &Point| 1.0;
    let c = PathConfig::with_dt(1e-4, 3);
    let n1 = palm_recursion(&dom, Level::Outer, &x, 0.0, &[&one], 10, &c, 1).unwrap();
    assert_eq!((n1.value, n1.se), (1.0, 0.0));
    let n2 = palm_recursion(&dom, Level::Outer, &x, 0.0, &[&one, &one], 4000, &c, 2).unwrap();
    assert!(n2.z_against_value(4.0 / 3.0).abs() < 3.0, "{n2:?}");
    // N_0⟨X,1⟩³ = 12 U(4(1 - |y|²)/3)(0) = 16 · 7/30.
    let n3 = palm_recursion(&dom, Level::Outer, &x, 0.0, &[&one, &one, &one], 2000, &c, 3).unwrap();
    assert!(n3.z_against_value(16.0 * 7.0 / 30.0).abs() < 3.0, "{n3:?}");
    let heavy = palm_recursion(&dom, Level::Outer, &x, 200.0, &[&one], 500, &c, 4).unwrap();
    assert!(heavy.value < 0.02);
    assert!(palm_recursion(&dom, Level::Outer, &x, -1.0, &[&one], 10, &c, 1).is_err());
}

#[test]
fn palm_recursion_tilted_first_moment() {
    // N_x(⟨X,1⟩e^{-λ⟨X,1⟩}) = ∂_λ w_λ(x).
    let dom = DomainModel::unit_ball(3).unwrap();
    let x = p(&[0.3, 0.0, 0.0]);
    let h = 1e-4;
    let w = |l: f64| boundary_value_profile(3, 1.0, l).unwrap().value(0.3);
    let exact = (w(1.0 + h) - w(1.0 - h)) / (2.0 * h);
    let one = |_: &Point| 1.0;
    let est = palm_recursion(&dom, Level::Outer, &x, 1.0, &[&one], 4000, &PathConfig::with_dt(1e-4, 3), 6).unwrap();
    assert!(est.z_against_value(exact).abs() < 3.0, "{est:?} vs {exact}");
}

#[test]
fn cumulants_agree_with_palm_recursion() {
    let dom = DomainModel::unit_ball(3).unwrap();
    let x = p(&[0.0, 0.2, 0.0]);
    let c1 = BoundaryTarget { center: p(&[0.0, 1.0, 0.0]), eps: 1.0, index: 1 };
    let c2 = BoundaryTarget { center: p(&[0.0, 0.0, 1.0]), eps: 1.0, index: 2 };
    let f1 = |z: &Point| c1.contains(z) as u8 as f64;
    let f2 = |z: &Point| c2.contains(z) as u8 as f64;
    let set = ReplicaSettings::new(200_000, 0.01, 7);
    for lambda in [0.0, 1.0] {
        let cum = excursion_cumulants(&dom, Level::Outer, &x, &[&f1, &f2], lambda, &set, &cfg()).unwrap();
        let palm = palm_recursion(&dom, Level::Outer, &x, lambda, &[&f1, &f2], 4000, &PathConfig::with_dt(1e-4, 3), 8).unwrap();
        assert!(cum.joint().z_against(&palm).abs() < 3.0, "λ = {lambda}: {:?} vs {palm:?}", cum.joint());
        let single = palm_recursion(&dom, Level::Outer, &x, lambda, &[&f1], 4000, &PathConfig::with_dt(1e-4, 3), 9).unwrap();
        let s = cum.get(SubsetId::singleton(1, 2).unwrap()).unwrap();
        assert!(s.z_against(&single).abs() < 3.0, "λ = {lambda}: {s:?} vs {single:?}");
    }
}

#[test]
fn log_laplace_recovers_half_space_solution() {
    let dom = DomainModel::half_space_cap(3, 1.0, 0.8).unwrap();
    let x = p(&[0.0, 0.0, 1.0]);
    let set = ReplicaSettings::new(100_000, 0.002, 10);
    assert_eq!(log_laplace_check(&dom, Level::Sub(1), &x, &ZeroField, &set, &cfg()).unwrap().value, 0.0);
    let g = half_space_exact(3);
    let a = log_laplace_check(&dom, Level::Sub(1), &x, &g, &set, &cfg()).unwrap();
    let b = log_laplace_check(&dom, Level::Sub(2), &x, &g, &set, &cfg()).unwrap();
    assert!(a.z_against_value(1.5).abs() < 3.0, "{a:?}");
    assert!(b.z_against_value(1.5).abs() < 3.0, "{b:?}");
}

#[test]
fn pruned_mean_matches_killing_weight() {
    let dom = DomainModel::half_space_cap(3, 1.0, 0.8).unwrap();
    let x = p(&[0.1, 0.0, 1.1]);
    let g = half_space_exact(3);
    let eps = 0.02;
    let pruned = par_replicas(40_000, 11, tag("pruned"), |_, rng| {
        let cloud = ParticleCloud::single(&x, eps).unwrap();
        evolve_exit(&dom, Level::Sub(2), &cloud, &g, &cfg(), rng).unwrap().total_mass() / eps
    });
    let c = PathConfig::with_dt(1e-4, 3);
    let weighted = par_replicas(40_000, 12, tag("weighted"), |_, rng| {
        sample_killed(&dom, Level::Sub(2), &x, &g, &c, rng).unwrap().log_weight.exp()
    });
    let ((a, sa), (b, sb)) = (mean_se(&pruned), mean_se(&weighted));
    assert!((a - b).abs() < 3.0 * (sa * sa + sb * sb).sqrt(), "{a} ± {sa} vs {b} ± {sb}");
}
