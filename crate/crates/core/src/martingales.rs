//! The partition martingales `M_k^A` and estimators of their excursion-measure
//! expectations.
//!
//! `M_k^A = Σ_{σ∈P(A)} exp(-⟨X^k,g⟩) Π_{C∈σ} ⟨X^k, v^C⟩`, evaluated on exit
//! samples of a nested subdomain `D_k`. Under `N_x` its mean is `v^A(x)` at
//! every level, and `(1/v^N(x)) N_x(Φ M_k^N)` defines the conditioned law.

use crate::diffusion::PathConfig;
use crate::error::{Error, Result};
use crate::geometry::{DomainModel, Level, Point};
use crate::partitions::{enumerate_partitions, Partition, SubsetId};
use crate::pde::vfamily::VFamily;
use crate::pde::ZeroField;
use crate::rng::{par_replicas, tag};
use crate::stats::{cumulant_sum, mean_se, EstimatorKind, EstimatorResult, JACKKNIFE_GROUPS};
use crate::superprocess::{
    evolve, exit_functionals, palm_recursion, EvolveOptions, ExitMeasureSample, ParticleCloud, ReplicaSettings,
    TestFn,
};
use serde::Serialize;

/// `M_k^A` for a family `v` at level `D_k`.
#[derive(Clone, Copy, Debug)]
pub struct MartingaleSpec<'a> {
    pub a: SubsetId,
    pub vf: &'a VFamily,
    pub level: Level,
}

impl<'a> MartingaleSpec<'a> {
    /// Checks that `A` is a nonempty subset of the family and that `D_k` is a
    /// proper subdomain, so every `v^C` is finite on `∂D_k`.
    pub fn new(a: SubsetId, vf: &'a VFamily, level: Level) -> Result<Self> {
        if a.is_empty() || !a.is_subset_of(vf.full()) {
            return Err(Error::InvalidSubset(format!("{a} is not a nonempty subset of {}", vf.full())));
        }
        if a.len() > 3 {
            return Err(Error::Unsupported(format!("|A| = {} (supported: up to 3)", a.len())));
        }
        if level == Level::Outer {
            return Err(Error::InvalidParameter("M_k^A needs a proper subdomain D_k".into()));
        }
        vf.dom.level_radius(level)?;
        let base = vf.value(a, &vf.base);
        if !base.is_finite() {
            return Err(Error::Divergent(format!("v^{a} is not finite at the base point")));
        }
        Ok(MartingaleSpec { a, vf, level })
    }

    pub fn dom(&self) -> &DomainModel {
        &self.vf.dom
    }

    pub fn partitions(&self) -> Vec<Partition> {
        enumerate_partitions(self.a).expect("nonempty subset")
    }

    fn at_level(&self, level: Level) -> Result<Self> {
        MartingaleSpec::new(self.a, self.vf, level)
    }
}

/// `M_k^A` on an exit sample, by enumeration of the partitions of `A`.
#[allow(non_snake_case)]
pub fn eval_M(spec: &MartingaleSpec, xs: &ExitMeasureSample) -> f64 {
    let g = spec.vf.g();
    let tilt = if g.is_zero() { 1.0 } else { (-xs.integrate(&|y: &Point| g.value(y))).exp() };
    let pair: Vec<(SubsetId, f64)> =
        spec.a.nonempty_subsets().into_iter().map(|c| (c, xs.integrate(&|y: &Point| spec.vf.value(c, y)))).collect();
    let look = |c: SubsetId| pair.iter().find(|p| p.0 == c).map(|p| p.1).expect("subset of A");
    spec.partitions().iter().map(|s| tilt * s.blocks().iter().map(|c| look(*c)).product::<f64>()).sum()
}

/// `N_x(M_k^A)` from `ε δ_x` replicas.
///
/// Each partition term `N_x(e_g Π_{C∈σ} ⟨X^k, v^C⟩)` is the joint cumulant of
/// order `|σ|` of the functionals `⟨X^k, v^C⟩`, divided by `ε`. For `g ≠ 0`
/// the cumulants are taken under the weights `exp(-⟨X^k, g⟩)`. The terms share
/// replicas and one jackknife covers their sum.
#[allow(non_snake_case)]
pub fn estimate_NM(spec: &MartingaleSpec, x: &Point, set: &ReplicaSettings, cfg: &PathConfig) -> Result<EstimatorResult> {
    let (subsets, table) = functional_table(spec, spec.level, x, set, cfg, "estimate_NM")?;
    let m = subsets.len();
    let cols: Vec<Vec<f64>> = (0..table.rows.first().map_or(0, |r| r.len())).map(|i| table.column(i)).collect();
    let weights: Option<Vec<f64>> = (cols.len() > m).then(|| cols[m].iter().map(|z| (-z).exp()).collect());
    let refs: Vec<&[f64]> = cols[..m].iter().map(|c| c.as_slice()).collect();
    let terms: Vec<Vec<usize>> = spec
        .partitions()
        .iter()
        .map(|s| s.blocks().iter().map(|c| subsets.iter().position(|d| d == c).expect("block of A")).collect())
        .collect();
    let (v, se) = cumulant_sum(&refs, &terms, weights.as_deref(), JACKKNIFE_GROUPS);
    Ok(EstimatorResult::new(v / set.eps_mass, se / set.eps_mass, table.rows.len(), EstimatorKind::Cumulant))
}

/// Replica table of `⟨X^k, v^C⟩` for nonempty `C ⊆ A`, followed by `⟨X^k, g⟩` when `g ≠ 0`.
fn functional_table(
    spec: &MartingaleSpec,
    level: Level,
    x: &Point,
    set: &ReplicaSettings,
    cfg: &PathConfig,
    label: &str,
) -> Result<(Vec<SubsetId>, crate::superprocess::ReplicaTable)> {
    let subsets = spec.a.nonempty_subsets();
    let fns: Vec<Box<dyn Fn(&Point) -> f64 + Sync>> = subsets
        .iter()
        .map(|&c| {
            let vf = spec.vf;
            Box::new(move |y: &Point| vf.value(c, y)) as Box<dyn Fn(&Point) -> f64 + Sync>
        })
        .collect();
    let g = spec.vf.g();
    let gf = |y: &Point| g.value(y);
    let mut psis: Vec<TestFn> = fns.iter().map(|f| f.as_ref() as TestFn).collect();
    if !g.is_zero() {
        psis.push(&gf);
    }
    let table = exit_functionals(spec.dom(), level, x, &ZeroField, &psis, set, cfg, label)?;
    Ok((subsets, table))
}

/// One partition term of the conditioned Laplace functional.
#[derive(Clone, Debug, Serialize)]
pub struct HTransformTerm {
    pub partition: String,
    /// `(1/v^A(x)) N_x(e_λ Π_{C∈σ} ⟨X^k, v^C⟩)`.
    pub estimate: EstimatorResult,
}

/// `(1/v^A(x)) N_x(exp(-λ⟨X^k,1⟩) M_k^A)` with its per-partition terms.
#[derive(Clone, Debug, Serialize)]
pub struct HTransformLaplace {
    pub lambda: f64,
    pub total: EstimatorResult,
    /// Empty at `λ = 0`.
    pub terms: Vec<HTransformTerm>,
}

/// The conditioned side of the Laplace functional identity.
///
/// Each term `N_x(e_λ Π_{C∈σ} ⟨X^k, v^C⟩)` is estimated by the Palm recursion
/// with an independent stream; the total divides by `v^A(x)`. At `λ = 0` the
/// total is exactly 1, since `N_x(M_k^A) = v^A(x)`.
pub fn htransform_laplace(
    spec: &MartingaleSpec,
    x: &Point,
    lambda: f64,
    reps: usize,
    cfg: &PathConfig,
    seed: u64,
) -> Result<HTransformLaplace> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter(format!("λ must be finite and nonnegative, got {lambda}")));
    }
    let parts = spec.partitions();
    let vx = spec.vf.value(spec.a, x);
    if !(vx > 0.0 && vx.is_finite()) {
        return Err(Error::InvalidParameter(format!("v^{} must be positive and finite at the start", spec.a)));
    }
    if lambda == 0.0 {
        let total = EstimatorResult::exact(1.0, EstimatorKind::PalmRecursion);
        return Ok(HTransformLaplace { lambda, total, terms: Vec::new() });
    }
    if !spec.vf.g().is_zero() {
        return Err(Error::Unsupported("the Palm recursion needs g = 0 when λ > 0".into()));
    }
    let mut terms = Vec::with_capacity(parts.len());
    let (mut total, mut var) = (0.0, 0.0);
    for s in &parts {
        let t = htransform_term(spec, s, x, lambda, reps, cfg, seed)?;
        total += t.estimate.value;
        var += t.estimate.se * t.estimate.se;
        terms.push(t);
    }
    let total = EstimatorResult::new(total, var.sqrt(), reps, EstimatorKind::PalmRecursion);
    Ok(HTransformLaplace { lambda, total, terms })
}

/// `(1/v^A(x)) N_x(e_λ Π_{C∈σ} ⟨X^k, v^C⟩)` for one partition `σ` of `A`.
pub fn htransform_term(
    spec: &MartingaleSpec,
    sigma: &Partition,
    x: &Point,
    lambda: f64,
    reps: usize,
    cfg: &PathConfig,
    seed: u64,
) -> Result<HTransformTerm> {
    if sigma.ground() != spec.a {
        return Err(Error::NotSubset(format!("{sigma} is not a partition of {}", spec.a)));
    }
    if !spec.vf.g().is_zero() {
        return Err(Error::Unsupported("the Palm recursion needs g = 0".into()));
    }
    let vx = spec.vf.value(spec.a, x);
    let vf = spec.vf;
    let fns: Vec<Box<dyn Fn(&Point) -> f64 + Sync>> = sigma
        .blocks()
        .iter()
        .map(|&c| Box::new(move |y: &Point| vf.value(c, y)) as Box<dyn Fn(&Point) -> f64 + Sync>)
        .collect();
    let psis: Vec<TestFn> = fns.iter().map(|f| f.as_ref() as TestFn).collect();
    let stream_seed = seed ^ tag(&format!("htransform {sigma}"));
    let r = palm_recursion(spec.dom(), spec.level, x, lambda, &psis, reps, cfg, stream_seed)?;
    Ok(HTransformTerm {
        partition: sigma.to_string(),
        estimate: EstimatorResult::new(r.value / vx, r.se / vx, r.replicas, r.kind),
    })
}

/// Least-squares fit of `M_{k+1}^A` on `M_k^A` over replicas that continue the
/// exit atoms of `D_k` to `∂D_{k+1}`.
#[derive(Clone, Debug, Serialize)]
pub struct RegressionReport {
    pub slope: f64,
    pub slope_se: f64,
    pub intercept: f64,
    pub intercept_se: f64,
    /// Replicas with `M_k^A > 0`.
    pub active: usize,
    pub replicas: usize,
}

/// Regression diagnostic of the martingale property between `D_k` and `D_{k+1}`.
///
/// The intercept is divided by `ε` so both coefficients are on the scale of a
/// single excursion. Identity map: slope 1, intercept 0.
pub fn martingale_regression(
    spec: &MartingaleSpec,
    x: &Point,
    set: &ReplicaSettings,
    cfg: &PathConfig,
) -> Result<RegressionReport> {
    let k = match spec.level {
        Level::Sub(k) => k,
        Level::Outer => unreachable!("checked in MartingaleSpec::new"),
    };
    let next = spec.at_level(Level::Sub(k + 1))?;
    spec.dom().check_interior(x, spec.level)?;
    cfg.validate(spec.dom().dim)?;
    let opts = EvolveOptions { population_cap: set.population_cap, ..Default::default() };
    let dom = spec.dom();
    let pairs = par_replicas(set.reps, set.seed, tag("martingale_regression"), |_, rng| -> Result<Option<(f64, f64)>> {
        let cloud = ParticleCloud::poisson(x, set.eps_mass, set.eps_mass, rng)?;
        let first = match evolve(dom, spec.level, &cloud, &ZeroField, &opts, cfg, rng) {
            Ok(ev) => ev.exit,
            Err(Error::PopulationCap { .. }) => return Ok(None),
            Err(e) => return Err(e),
        };
        let mk = eval_M(spec, &first);
        let mut cont = ParticleCloud::new(set.eps_mass)?;
        for (i, a) in first.atoms.iter().enumerate() {
            cont.particles.push(crate::superprocess::Particle { pos: *a, lineage: i as u64 });
        }
        let second = match evolve(dom, next.level, &cont, &ZeroField, &opts, cfg, rng) {
            Ok(ev) => ev.exit,
            Err(Error::PopulationCap { .. }) => return Ok(None),
            Err(e) => return Err(e),
        };
        Ok(Some((mk, eval_M(&next, &second))))
    });
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for p in pairs {
        if let Some((a, b)) = p? {
            xs.push(a);
            ys.push(b);
        }
    }
    let n = xs.len();
    if n < 3 {
        return Err(Error::Numerical("fewer than 3 replicas for the regression".into()));
    }
    let (mx, _) = mean_se(&xs);
    let (my, _) = mean_se(&ys);
    let sxx: f64 = xs.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::Numerical("M_k^A is constant over the replicas".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    // Heteroskedasticity-robust (White) standard errors.
    let mut vs = 0.0;
    let mut vi = 0.0;
    let c = mx / sxx;
    for (a, b) in xs.iter().zip(&ys) {
        let e2 = (b - intercept - slope * a).powi(2);
        let ws = (a - mx) / sxx;
        let wi = 1.0 / n as f64 - c * (a - mx);
        vs += ws * ws * e2;
        vi += wi * wi * e2;
    }
    let slope_se = vs.sqrt();
    let intercept_se = vi.sqrt();
    Ok(RegressionReport {
        slope,
        slope_se,
        intercept: intercept / set.eps_mass,
        intercept_se: intercept_se / set.eps_mass,
        active: xs.iter().filter(|&&a| a > 0.0).count(),
        replicas: n,
    })
}
