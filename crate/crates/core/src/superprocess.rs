//! Branching-particle approximation of super-Brownian motion and estimators
//! of excursion-measure functionals.
//!
//! Particles of mass `ε` move as Brownian motions, branch at rate `4/ε` into
//! zero or two offspring with probability ½ each, and are optionally killed at
//! rate `4g`. A particle reaching `∂D_k` is frozen and becomes an atom of the
//! exit measure. The initial particle count is Poisson with mean `μ(1)/ε`, so
//! that `P_{εδ_x}` is a Poisson cluster and cumulants divided by `ε` estimate
//! moments under the excursion measure `N_x`.

use crate::diffusion::{exp_time, gaussian_step, step_size, Killing, PathConfig, StepOutcome, TransformSpec, Walker};
use crate::error::{Error, Result};
use crate::geometry::{Ball, DomainModel, Level, Point};
use crate::partitions::SubsetId;
use crate::pde::radial::boundary_value_profile;
use crate::pde::{FieldSymmetry, NonlinearField};
use crate::rng::{par_replicas, stream, tag};
use crate::stats::{jackknife, joint_cumulant, mean_se, EstimatorKind, EstimatorResult, JACKKNIFE_GROUPS};
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::Serialize;

/// Default particle cap per replica.
pub const POPULATION_CAP: usize = 1_000_000;

/// A bounded test function on the boundary.
pub type TestFn<'a> = &'a (dyn Fn(&Point) -> f64 + Sync);

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Particle {
    pub pos: Point,
    /// Index of the initial particle this one descends from.
    pub lineage: u64,
}

/// A finite population of equal-mass particles at a common time.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParticleCloud {
    pub particles: Vec<Particle>,
    pub mass: f64,
    pub time: f64,
}

impl ParticleCloud {
    pub fn new(mass: f64) -> Result<Self> {
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::InvalidParameter(format!("particle mass must be positive, got {mass}")));
        }
        Ok(ParticleCloud { particles: Vec::new(), mass, time: 0.0 })
    }

    /// One particle at `x`.
    pub fn single(x: &Point, mass: f64) -> Result<Self> {
        let mut c = Self::new(mass)?;
        c.particles.push(Particle { pos: *x, lineage: 0 });
        Ok(c)
    }

    /// Poisson(`total / mass`) particles at `x`: the approximation of `total·δ_x`.
    pub fn poisson<R: Rng + ?Sized>(x: &Point, total: f64, mass: f64, rng: &mut R) -> Result<Self> {
        let mut c = Self::new(mass)?;
        let lambda = total / mass;
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!("initial mass must be positive, got {total}")));
        }
        let n = Poisson::new(lambda).map_err(|e| Error::InvalidParameter(e.to_string()))?.sample(rng) as u64;
        c.particles.extend((0..n).map(|lineage| Particle { pos: *x, lineage }));
        Ok(c)
    }

    pub fn total_mass(&self) -> f64 {
        self.mass * self.particles.len() as f64
    }
}

/// Atoms of an exit measure on `∂D_k`, each carrying the particle mass.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExitMeasureSample {
    pub atoms: Vec<Point>,
    pub mass: f64,
    pub level: Level,
    pub replica: u64,
    pub seed: u64,
}

impl ExitMeasureSample {
    pub fn total_mass(&self) -> f64 {
        self.mass * self.atoms.len() as f64
    }

    /// `⟨X, φ⟩`.
    pub fn integrate<F: Fn(&Point) -> f64 + ?Sized>(&self, phi: &F) -> f64 {
        self.mass * self.atoms.iter().map(phi).sum::<f64>()
    }
}

/// Stopping rules for [`evolve`].
#[derive(Clone, Copy, Debug)]
pub struct EvolveOptions {
    pub population_cap: usize,
    /// Particles still inside at this time are returned alive.
    pub horizon: f64,
    /// Advance deep particles by whole subtrees when `g = 0`.
    pub macro_steps: bool,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        EvolveOptions { population_cap: POPULATION_CAP, horizon: f64::INFINITY, macro_steps: true }
    }
}

/// Result of [`evolve`].
#[derive(Clone, Debug, Serialize)]
pub struct Evolution {
    pub exit: ExitMeasureSample,
    /// Particles alive at the horizon.
    pub alive: ParticleCloud,
    pub branch_events: u64,
    pub killed: u64,
    pub steps: u64,
    pub macro_steps: u64,
    /// Leaves of macro steps that landed outside the ball; recorded as exits.
    pub macro_escapes: u64,
}

enum Fate {
    Exit(Point),
    Killed,
    Event(Point),
}

struct Mover<'a> {
    ball: Ball,
    g: Option<&'a dyn NonlinearField>,
    cap: f64,
    dt_min: f64,
}

impl Mover<'_> {
    /// Moves a particle from `x` for time `dur` unless it exits or is killed first.
    #[inline]
    fn advance<R: Rng + ?Sized>(&self, x: &Point, dur: f64, steps: &mut u64, rng: &mut R) -> Fate {
        let mut x = *x;
        let mut depth = self.ball.depth(&x);
        let mut left = dur;
        let mut gx = self.g.map_or(0.0, |g| g.value(&x));
        loop {
            let mut h = step_size(depth, self.cap, self.dt_min);
            let last = h >= left;
            if last {
                h = left;
            }
            *steps += 1;
            match gaussian_step(&self.ball, &x, depth, None, h, rng) {
                StepOutcome::Exited(z) => return Fate::Exit(z),
                StepOutcome::Inside(y, dy) => {
                    if let Some(g) = self.g {
                        let gy = g.value(&y);
                        let lam = 2.0 * h * (gx + gy);
                        if rng.random::<f64>() < -(-lam).exp_m1() {
                            return Fate::Killed;
                        }
                        gx = gy;
                    }
                    x = y;
                    depth = dy;
                    if last {
                        return Fate::Event(x);
                    }
                    left -= h;
                }
            }
        }
    }
}

/// Evolves a particle cloud inside level `level` until every particle has
/// exited, died, or reached the horizon.
///
/// `g` prunes the population: particles are killed at rate `4g`. Lineages are
/// processed depth first, which is exact because particles are independent.
pub fn evolve<R: Rng + ?Sized>(
    dom: &DomainModel,
    level: Level,
    cloud: &ParticleCloud,
    g: &dyn NonlinearField,
    opts: &EvolveOptions,
    cfg: &PathConfig,
    rng: &mut R,
) -> Result<Evolution> {
    cfg.validate(dom.dim)?;
    let ball = dom.ball_at(level)?;
    for p in &cloud.particles {
        dom.check_interior(&p.pos, level)?;
    }
    let pruned = !g.is_zero();
    let mover = Mover {
        ball,
        g: pruned.then_some(g),
        cap: if pruned { cfg.dt } else { f64::INFINITY },
        dt_min: cfg.dt_min,
    };
    let rate = 4.0 / cloud.mass;
    let mut out = Evolution {
        exit: ExitMeasureSample { atoms: Vec::new(), mass: cloud.mass, level, replica: 0, seed: 0 },
        alive: ParticleCloud { particles: Vec::new(), mass: cloud.mass, time: opts.horizon },
        branch_events: 0,
        killed: 0,
        steps: 0,
        macro_steps: 0,
        macro_escapes: 0,
    };
    let mut stack: Vec<(Point, f64, u64)> =
        cloud.particles.iter().rev().map(|p| (p.pos, cloud.time, p.lineage)).collect();
    let macro_steps = opts.macro_steps && !pruned;
    let birth = 0.5 * rate;
    let mut spine: Vec<(f64, Point)> = Vec::new();
    let mut leaves: Vec<Point> = Vec::new();
    while let Some((mut x, mut t, lineage)) = stack.pop() {
        if macro_steps {
            let depth = ball.depth(&x);
            let s = (depth / MACRO_GAMMA).powi(2).min(opts.horizon - t);
            if birth * s >= MACRO_MIN_BIRTHS {
                out.macro_steps += 1;
                coalescent_leaves(&x, s, birth, &mut spine, &mut leaves, rng);
                for y in leaves.drain(..) {
                    if !ball.contains(&y) {
                        out.macro_escapes += 1;
                        out.exit.atoms.push(ball.project(&y));
                    } else if t + s >= opts.horizon {
                        out.alive.particles.push(Particle { pos: y, lineage });
                    } else {
                        stack.push((y, t + s, lineage));
                    }
                }
                if stack.len() + out.alive.particles.len() > opts.population_cap {
                    return Err(Error::PopulationCap { cap: opts.population_cap });
                }
                continue;
            }
        }
        loop {
            let event = t + exp_time(rate, rng);
            let stop = event.min(opts.horizon);
            match mover.advance(&x, stop - t, &mut out.steps, rng) {
                Fate::Exit(z) => {
                    out.exit.atoms.push(z);
                    break;
                }
                Fate::Killed => {
                    out.killed += 1;
                    break;
                }
                Fate::Event(y) if event >= opts.horizon => {
                    out.alive.particles.push(Particle { pos: y, lineage });
                    break;
                }
                Fate::Event(y) => {
                    out.branch_events += 1;
                    if rng.random::<bool>() {
                        break;
                    }
                    x = y;
                    t = event;
                    stack.push((y, t, lineage));
                    if stack.len() + out.alive.particles.len() > opts.population_cap {
                        return Err(Error::PopulationCap { cap: opts.population_cap });
                    }
                }
            }
            if out.steps > cfg.max_steps as u64 {
                return Err(Error::StepBudget { max_steps: cfg.max_steps });
            }
        }
    }
    Ok(out)
}

/// Macro steps last `(depth / MACRO_GAMMA)²`, so a Brownian path leaves the
/// ball within one step with probability below `1e-7`.
pub const MACRO_GAMMA: f64 = 6.0;
/// Macro steps are used when they replace at least this many expected births.
pub const MACRO_MIN_BIRTHS: f64 = 0.2;

/// Positions after time `s` of the descendants of one particle at `x`, for
/// critical binary branching with birth rate `b`, ignoring the boundary.
///
/// The genealogy of the particles alive at time `s` is a coalescent point
/// process: leaf `i + 1` branches off the lineage of leaf `i` at depth `H_i`,
/// with `P(H > h) = 1/(1 + bh)`, and the leaf count is the first `i` with
/// `H_i > s`. Positions are Brownian along that tree; branch points on the
/// current lineage are filled in by Brownian bridges.
fn coalescent_leaves<R: Rng + ?Sized>(
    x: &Point,
    s: f64,
    b: f64,
    spine: &mut Vec<(f64, Point)>,
    leaves: &mut Vec<Point>,
    rng: &mut R,
) {
    if rng.random::<f64>() * (1.0 + b * s) >= 1.0 {
        return;
    }
    let d = x.dim();
    let gauss = |rng: &mut R, sd: f64| {
        let mut p = Point::zeros(d);
        for i in 0..d {
            let z: f64 = rng.sample(StandardNormal);
            p[i] = sd * z;
        }
        p
    };
    spine.clear();
    let first = *x + gauss(rng, s.sqrt());
    spine.push((0.0, *x));
    spine.push((s, first));
    leaves.push(first);
    loop {
        let v: f64 = 1.0 - rng.random::<f64>();
        let h = (1.0 / v - 1.0) / b;
        if h >= s {
            return;
        }
        let u = s - h;
        let mut after = spine.pop().expect("spine holds the current leaf");
        while spine.last().expect("spine holds the root").0 > u {
            after = spine.pop().expect("checked");
        }
        let (ta, pa) = *spine.last().expect("spine holds the root");
        let (tb, pb) = after;
        let w = (u - ta) / (tb - ta);
        let at = pa + (pb - pa) * w + gauss(rng, ((u - ta) * (tb - u) / (tb - ta)).sqrt());
        let leaf = at + gauss(rng, h.sqrt());
        spine.push((u, at));
        spine.push((s, leaf));
        leaves.push(leaf);
    }
}

/// Evolves `cloud` to its exit measure on `∂D_k`.
pub fn evolve_exit<R: Rng + ?Sized>(
    dom: &DomainModel,
    level: Level,
    cloud: &ParticleCloud,
    g: &dyn NonlinearField,
    cfg: &PathConfig,
    rng: &mut R,
) -> Result<ExitMeasureSample> {
    Ok(evolve(dom, level, cloud, g, &EvolveOptions::default(), cfg, rng)?.exit)
}

/// Settings shared by the replica-based estimators.
#[derive(Clone, Copy, Debug)]
pub struct ReplicaSettings {
    pub reps: usize,
    pub eps_mass: f64,
    pub seed: u64,
    pub population_cap: usize,
}

impl ReplicaSettings {
    pub fn new(reps: usize, eps_mass: f64, seed: u64) -> Self {
        ReplicaSettings { reps, eps_mass, seed, population_cap: POPULATION_CAP }
    }
}

/// Per-replica functionals `⟨X^k, ψ_i⟩` from `εδ_x` starts.
#[derive(Clone, Debug, Serialize)]
pub struct ReplicaTable {
    /// `rows[r][i] = ⟨X^k, ψ_i⟩` in replica `r`; flagged replicas are absent.
    pub rows: Vec<Vec<f64>>,
    /// Replica ids of `rows`.
    pub ids: Vec<u64>,
    /// Replicas aborted at the population cap.
    pub flagged: Vec<u64>,
}

impl ReplicaTable {
    pub fn column(&self, i: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[i]).collect()
    }
}

/// Runs `reps` independent replicas from `ε_mass·δ_x` and records `⟨X^k, ψ_i⟩`.
#[allow(clippy::too_many_arguments)]
pub fn exit_functionals(
    dom: &DomainModel,
    level: Level,
    x: &Point,
    g: &dyn NonlinearField,
    psis: &[TestFn],
    set: &ReplicaSettings,
    cfg: &PathConfig,
    label: &str,
) -> Result<ReplicaTable> {
    dom.check_interior(x, level)?;
    cfg.validate(dom.dim)?;
    if set.reps < 2 {
        return Err(Error::InvalidParameter("need at least 2 replicas".into()));
    }
    let opts = EvolveOptions { population_cap: set.population_cap, ..Default::default() };
    let results = par_replicas(set.reps, set.seed, tag(label), |_, rng| -> Result<Option<Vec<f64>>> {
        let cloud = ParticleCloud::poisson(x, set.eps_mass, set.eps_mass, rng)?;
        match evolve(dom, level, &cloud, g, &opts, cfg, rng) {
            Ok(ev) => Ok(Some(psis.iter().map(|psi| ev.exit.integrate(psi)).collect())),
            Err(Error::PopulationCap { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    });
    let mut table = ReplicaTable { rows: Vec::new(), ids: Vec::new(), flagged: Vec::new() };
    for (i, r) in results.into_iter().enumerate() {
        match r? {
            Some(row) => {
                table.rows.push(row);
                table.ids.push(i as u64);
            }
            None => table.flagged.push(i as u64),
        }
    }
    if table.rows.len() < 2 {
        return Err(Error::Numerical("fewer than 2 replicas survived the population cap".into()));
    }
    Ok(table)
}

/// Cumulant estimates for every nonempty subset of the test functions.
#[derive(Clone, Debug, Serialize)]
pub struct CumulantSet {
    pub estimates: Vec<(SubsetId, EstimatorResult)>,
    pub flagged: usize,
}

impl CumulantSet {
    pub fn get(&self, a: SubsetId) -> Option<&EstimatorResult> {
        self.estimates.iter().find(|(b, _)| *b == a).map(|(_, e)| e)
    }

    /// The joint cumulant of all test functions.
    pub fn joint(&self) -> &EstimatorResult {
        let full = self.estimates.iter().fold(SubsetId::EMPTY, |u, (a, _)| u.union(*a));
        self.get(full).expect("full set present")
    }
}

/// Joint cumulants of `(⟨X^k, ψ_i⟩)` under `P_{εδ_x}`, divided by `ε`, tilted
/// by `exp(-λ⟨X^k, 1⟩)`.
///
/// These estimate `N_x(exp(-λ⟨X^k,1⟩) Π_{i∈A} ⟨X^k, ψ_i⟩)` for each nonempty `A`,
/// up to a bias of order `ε`.
#[allow(clippy::too_many_arguments)]
pub fn excursion_cumulants(
    dom: &DomainModel,
    level: Level,
    x: &Point,
    psis: &[TestFn],
    lambda: f64,
    set: &ReplicaSettings,
    cfg: &PathConfig,
) -> Result<CumulantSet> {
    let m = psis.len();
    if m == 0 || m > 3 {
        return Err(Error::Unsupported(format!("cumulant order {m} (supported: 1 to 3)")));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter(format!("tilt must be finite and nonnegative, got {lambda}")));
    }
    let one = |_: &Point| 1.0;
    let mut all: Vec<TestFn> = psis.to_vec();
    all.push(&one);
    let table = exit_functionals(dom, level, x, &crate::pde::ZeroField, &all, set, cfg, "excursion_cumulants")?;
    let cols: Vec<Vec<f64>> = (0..=m).map(|i| table.column(i)).collect();
    let weights: Option<Vec<f64>> = (lambda > 0.0).then(|| cols[m].iter().map(|z| (-lambda * z).exp()).collect());
    let full = SubsetId::full(m).expect("m <= 3");
    let mut estimates = Vec::new();
    for a in full.nonempty_subsets() {
        let sel: Vec<&[f64]> = a.elems().into_iter().map(|i| cols[i - 1].as_slice()).collect();
        let (k, se) = joint_cumulant(&sel, weights.as_deref(), JACKKNIFE_GROUPS);
        estimates.push((a, EstimatorResult::new(k / set.eps_mass, se / set.eps_mass, table.rows.len(), EstimatorKind::Cumulant)));
    }
    Ok(CumulantSet { estimates, flagged: table.flagged.len() })
}

/// `-log E exp(-⟨X^k, g⟩) / ε` from `εδ_x` starts, with a jackknife standard error.
///
/// For a solution `g` of `½Δg = 2g²` finite on the closure of `D_k` this
/// estimates `N_x(1 - exp(-⟨X^k, g⟩)) = g(x)`.
pub fn log_laplace_check(
    dom: &DomainModel,
    level: Level,
    x: &Point,
    g: &dyn NonlinearField,
    set: &ReplicaSettings,
    cfg: &PathConfig,
) -> Result<EstimatorResult> {
    if g.is_zero() {
        return Ok(EstimatorResult::exact(0.0, EstimatorKind::Direct));
    }
    let ball = dom.ball_at(level)?;
    let on_sphere = ball.project(&(ball.center + Point::axis(dom.dim, dom.dim - 1, -1.0)));
    if !g.value(&on_sphere).is_finite() {
        return Err(Error::InvalidParameter("g must be finite on the closure of the level".into()));
    }
    let gf = |z: &Point| g.value(z);
    let table = exit_functionals(dom, level, x, &crate::pde::ZeroField, &[&gf], set, cfg, "log_laplace_check")?;
    let e: Vec<f64> = table.rows.iter().map(|r| (-r[0]).exp()).collect();
    let eps = set.eps_mass;
    let (v, se) = jackknife(e.len(), JACKKNIFE_GROUPS, |i| vec![e[i]], |s, n| -(s[0] / n as f64).ln() / eps);
    Ok(EstimatorResult::new(v, se, e.len(), EstimatorKind::Direct))
}

/// `N_x(exp(-λ⟨X^k,1⟩) Π_{i} ⟨X^k, ψ_i⟩)` by the Palm recursion.
///
/// With `φ = λ` constant, `N_y(1 - e_φ) = w_λ(y)` is the radial solution of
/// `½Δw = 2w²` with `w = λ` on `∂D_k`, so `𝒩_t(e_φ) = exp(-∫_0^t 4w_λ(B_s)ds)`.
/// One function is handled by the basic Palm formula; two or three by the
/// extended formula, whose inner excursion moments are estimated recursively
/// and independently at uniformly sampled path times.
#[allow(clippy::too_many_arguments)]
pub fn palm_recursion(
    dom: &DomainModel,
    level: Level,
    x: &Point,
    lambda: f64,
    psis: &[TestFn],
    reps: usize,
    cfg: &PathConfig,
    seed: u64,
) -> Result<EstimatorResult> {
    let n = psis.len();
    if n == 0 || n > 3 {
        return Err(Error::Unsupported(format!("palm recursion of order {n} (supported: 1 to 3)")));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter(format!("only constant φ = λ ≥ 0 is supported, got {lambda}")));
    }
    dom.check_interior(x, level)?;
    cfg.validate(dom.dim)?;
    if reps < 2 {
        return Err(Error::InvalidParameter("need at least 2 replicas".into()));
    }
    let ball = dom.ball_at(level)?;
    let w = if lambda > 0.0 { Some(boundary_value_profile(dom.dim, ball.radius, lambda)?) } else { None };
    let field = RadialField { center: ball.center, profile: w };
    let killing = if lambda > 0.0 { Killing::Weight(&field) } else { Killing::None };
    let mut walker = Walker::new(ball, TransformSpec::Plain, killing, *cfg);
    walker.cap = cfg.dt;
    let palm = Palm { walker, psis, samples: 4 };
    let full = SubsetId::full(n).expect("n <= 3");
    let vals = par_replicas(reps, seed, tag("palm_recursion"), |_, rng| palm.estimate(full, x, rng));
    let vals: Vec<f64> = vals.into_iter().collect::<Result<_>>()?;
    let (m, se) = mean_se(&vals);
    Ok(EstimatorResult::new(m, se, reps, EstimatorKind::PalmRecursion))
}

/// `4w_λ` as a killing field.
#[derive(Debug)]
struct RadialField {
    center: Point,
    profile: Option<crate::pde::radial::RadialSolution>,
}

impl NonlinearField for RadialField {
    fn name(&self) -> &'static str {
        "boundary-value"
    }
    fn value(&self, x: &Point) -> f64 {
        self.profile.as_ref().map_or(0.0, |p| p.value(x.dist(&self.center)))
    }
    fn symmetry(&self) -> FieldSymmetry {
        FieldSymmetry::Radial { center: self.center }
    }
    fn is_zero(&self) -> bool {
        self.profile.is_none()
    }
}

struct Palm<'a> {
    walker: Walker<'a>,
    psis: &'a [TestFn<'a>],
    samples: usize,
}

impl Palm<'_> {
    fn estimate<R: Rng + ?Sized>(&self, a: SubsetId, y: &Point, rng: &mut R) -> Result<f64> {
        let mut times = vec![0.0];
        let mut points = vec![*y];
        let mut logw = vec![0.0];
        let mut lw = 0.0;
        let field = match self.walker.killing {
            Killing::Weight(g) => Some(g),
            _ => None,
        };
        let (term, _, _) = self.walker.run(y, 0.0, rng, |s| {
            if let Some(g) = field {
                lw -= 2.0 * (s.t1 - s.t0) * (g.value(&s.x0) + g.value(&s.x1));
            }
            times.push(s.t1);
            points.push(s.x1);
            logw.push(lw);
        })?;
        if a.len() == 1 {
            let i = a.min_elem().expect("nonempty") - 1;
            return Ok((self.psis[i])(&term.point()) * lw.exp());
        }
        let tau = term.time();
        let splits: Vec<(SubsetId, SubsetId)> = a
            .proper_nonempty_subsets()
            .into_iter()
            .filter(|m| m.contains(a.min_elem().expect("nonempty")))
            .map(|m| (m, a.difference(m)))
            .collect();
        let mut acc = 0.0;
        for j in 0..self.samples {
            let u = tau * (j as f64 + rng.random::<f64>()) / self.samples as f64;
            let i = times.partition_point(|&t| t <= u).saturating_sub(1).min(points.len() - 2);
            let at = points[i];
            let mut s = 0.0;
            for (m, rest) in &splits {
                s += self.estimate(*m, &at, rng)? * self.estimate(*rest, &at, rng)?;
            }
            acc += logw[i].exp() * s;
        }
        Ok(4.0 * tau * acc / self.samples as f64)
    }
}

/// Reproducible single exit sample for replica `replica`.
pub fn exit_sample(
    dom: &DomainModel,
    level: Level,
    x: &Point,
    g: &dyn NonlinearField,
    eps_mass: f64,
    cfg: &PathConfig,
    seed: u64,
    replica: u64,
) -> Result<ExitMeasureSample> {
    let mut rng = stream(seed, tag("exit_sample"), replica);
    let cloud = ParticleCloud::poisson(x, eps_mass, eps_mass, &mut rng)?;
    let mut s = evolve_exit(dom, level, &cloud, g, cfg, &mut rng)?;
    s.replica = replica;
    s.seed = seed;
    Ok(s)
}
