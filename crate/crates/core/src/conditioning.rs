//! Hitting probabilities of small boundary caps and the conditioned forest.
//!
//! A replica starts `Poisson(1)` particles of mass `ε` at `x`, the particle
//! approximation of `εδ_x`. Each initial particle's family is one cluster of
//! the Poisson cluster representation, so the number of clusters charging a
//! set of caps is Poisson with mean `ε·N_x(·)` and the replica frequency `p̂`
//! inverts to `-log(1 - p̂)/ε`.

use crate::backbone::{immigrate, sample_backbone_from};
use crate::error::{Error, Result};
use crate::geometry::{harmonic_measure_cap, martin_kernel, validate_targets, BoundaryTarget, DomainModel, Level, Point};
use crate::partitions::{enumerate_partitions, Partition, SubsetId};
use crate::pde::vfamily::VFamily;
use crate::pde::ZeroField;
use crate::rng::{par_replicas, tag};
use crate::stats::{jackknife, EstimatorKind, EstimatorResult, JACKKNIFE_GROUPS};
use crate::superprocess::{evolve, EvolveOptions, ExitMeasureSample, Particle, ParticleCloud, ReplicaSettings};
use crate::diffusion::PathConfig;
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::Serialize;

/// Conditioning events with fewer hits than this are flagged.
pub const MIN_CONDITIONED_HITS: u64 = 50;

/// Relative standard error above which an `ε` is dropped from the bracket.
pub const MAX_BRACKET_REL_SE: f64 = 0.25;

/// Stability band for `ρ(ε)/ρ(ε/2)`.
pub const BRACKET_BAND: (f64, f64) = (1.0 / 3.0, 3.0);

/// Relative tolerance of the Martin-ratio comparison at the smallest `ε`.
pub const MARTIN_TOLERANCE: f64 = 0.15;

/// Caps charged by each cluster of every replica.
#[derive(Clone, Debug, Serialize)]
pub struct HitSample {
    pub targets: Vec<BoundaryTarget>,
    /// Nonzero cap masks of the clusters of each surviving replica; bit `i`
    /// is set when the cluster charges target `i`.
    pub masks: Vec<Vec<u32>>,
    /// Replicas aborted at the population cap.
    pub flagged: Vec<u64>,
    pub eps_mass: f64,
}

impl HitSample {
    pub fn replicas(&self) -> usize {
        self.masks.len()
    }

    fn subset_mask(a: SubsetId) -> u32 {
        a.elems().iter().fold(0, |m, i| m | 1 << (i - 1))
    }

    /// Replicas in which one cluster charges every cap of `a`.
    pub fn hit_all(&self, r: usize, a: SubsetId) -> bool {
        let m = Self::subset_mask(a);
        self.masks[r].iter().any(|c| c & m == m)
    }

    /// Replicas in which some cluster charges a cap of `a`.
    pub fn hit_any(&self, r: usize, a: SubsetId) -> bool {
        let m = Self::subset_mask(a);
        self.masks[r].iter().any(|c| c & m != 0)
    }

    pub fn count_all(&self, a: SubsetId) -> u64 {
        (0..self.replicas()).filter(|&r| self.hit_all(r, a)).count() as u64
    }

    pub fn count_any(&self, a: SubsetId) -> u64 {
        (0..self.replicas()).filter(|&r| self.hit_any(r, a)).count() as u64
    }

    /// Poissonization inversion of a hit count.
    pub fn invert(&self, hits: u64) -> Inverted {
        invert(hits, self.replicas(), self.eps_mass)
    }

    /// `v̂^A` and `û^A` for every nonempty `A`.
    pub fn estimates(&self) -> Result<Vec<HitEstimate>> {
        let full = SubsetId::full(self.targets.len())?;
        Ok(full
            .nonempty_subsets()
            .into_iter()
            .map(|a| {
                let (hits_all, hits_any) = (self.count_all(a), self.count_any(a));
                HitEstimate {
                    a,
                    eps: self.targets.iter().map(|t| t.eps).fold(0.0, f64::max),
                    v: self.invert(hits_all),
                    u: self.invert(hits_any),
                    hits_all,
                    hits_any,
                    replicas: self.replicas(),
                }
            })
            .collect())
    }

    /// Compares `v̂^A` with `-Σ_{∅≠B⊆A} (-1)^{|B|} û^B` on the same replicas.
    ///
    /// The difference moves only in replicas where two or more clusters each
    /// charge some but not all caps of `A`. The standard error is the grouped
    /// jackknife, floored by the Poisson expectation of the number of such
    /// replicas, which the jackknife misses when none is observed.
    pub fn inclusion_exclusion(&self, a: SubsetId) -> InclusionExclusion {
        let subs = a.nonempty_subsets();
        let m = self.eps_mass;
        let inv = |s: f64, n: usize| -(1.0 - s / n as f64).ln() / m;
        let combine = |sums: &[f64], n: usize| -> (f64, f64) {
            let direct = inv(sums[0], n);
            let via_u: f64 = subs
                .iter()
                .zip(&sums[1..])
                .map(|(b, s)| if b.len() % 2 == 1 { inv(*s, n) } else { -inv(*s, n) })
                .sum();
            (direct, via_u)
        };
        let row = |r: usize| {
            let mut v = Vec::with_capacity(subs.len() + 1);
            v.push(f64::from(u8::from(self.hit_all(r, a))));
            v.extend(subs.iter().map(|b| f64::from(u8::from(self.hit_any(r, *b)))));
            v
        };
        let n = self.replicas();
        let (diff, diff_se) = jackknife(n, JACKKNIFE_GROUPS, row, |s, c| {
            let (d, u) = combine(s, c);
            d - u
        });
        let sums: Vec<f64> = (0..n).fold(vec![0.0; subs.len() + 1], |mut acc, r| {
            for (x, y) in acc.iter_mut().zip(row(r)) {
                *x += y;
            }
            acc
        });
        let (direct, combined) = combine(&sums, n);
        let nf = n as f64;
        let mu = (1.0 - self.count_all(a) as f64 / nf).ln() - (1.0 - self.count_any(a) as f64 / nf).ln();
        let multi = 1.0 - (-mu).exp() * (1.0 + mu);
        let diff_se = diff_se.max((nf * multi).sqrt() / (nf * m));
        let z = if diff_se > 0.0 { diff / diff_se } else if diff == 0.0 { 0.0 } else { f64::INFINITY };
        InclusionExclusion { a, direct, combined, diff, diff_se, z }
    }
}

/// An inverted hit frequency.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Inverted {
    pub value: f64,
    pub se: f64,
    /// No hits: `value` is the 95% upper confidence bound and `se` is NaN.
    pub upper_bound_only: bool,
}

fn invert(hits: u64, n: usize, eps_mass: f64) -> Inverted {
    let nf = n as f64;
    if hits == 0 {
        return Inverted { value: -(0.05f64).ln() / (nf * eps_mass), se: f64::NAN, upper_bound_only: true };
    }
    let p = hits as f64 / nf;
    if hits as usize == n {
        return Inverted { value: f64::INFINITY, se: f64::NAN, upper_bound_only: false };
    }
    let value = -(1.0 - p).ln() / eps_mass;
    let se = (p * (1.0 - p) / nf).sqrt() / ((1.0 - p) * eps_mass);
    Inverted { value, se, upper_bound_only: false }
}

/// Estimates of `v_ε^A` ("hit all") and `u_ε^A` ("hit at least one").
#[derive(Clone, Debug, Serialize)]
pub struct HitEstimate {
    pub a: SubsetId,
    pub eps: f64,
    pub v: Inverted,
    pub u: Inverted,
    pub hits_all: u64,
    pub hits_any: u64,
    pub replicas: usize,
}

/// Direct `v̂^A` against its inclusion–exclusion expression in `û`.
#[derive(Clone, Debug, Serialize)]
pub struct InclusionExclusion {
    pub a: SubsetId,
    pub direct: f64,
    pub combined: f64,
    pub diff: f64,
    pub diff_se: f64,
    pub z: f64,
}

fn cap_mask(targets: &[BoundaryTarget], atoms: &[Point]) -> u32 {
    let mut m = 0u32;
    for z in atoms {
        for (i, t) in targets.iter().enumerate() {
            if t.contains(z) {
                m |= 1 << i;
            }
        }
    }
    m
}

/// Runs `set.reps` replicas from `εδ_x` and records which caps on `∂D` each
/// cluster charges. Caps may overlap or be nested.
pub fn sample_hits(
    dom: &DomainModel,
    x: &Point,
    targets: &[BoundaryTarget],
    set: &ReplicaSettings,
    cfg: &PathConfig,
) -> Result<HitSample> {
    dom.check_interior(x, Level::Outer)?;
    cfg.validate(dom.dim)?;
    if targets.is_empty() || targets.len() > 16 {
        return Err(Error::InvalidParameter(format!("need 1 to 16 caps, got {}", targets.len())));
    }
    for t in targets {
        dom.check_point(&t.center)?;
        if !(t.eps > 0.0) {
            return Err(Error::DegenerateTarget(format!("target {} has nonpositive radius", t.index)));
        }
    }
    if set.reps < 2 {
        return Err(Error::InvalidParameter("need at least 2 replicas".into()));
    }
    let opts = EvolveOptions { population_cap: set.population_cap, ..Default::default() };
    let runs = par_replicas(set.reps, set.seed, tag("hits"), |_, rng| -> Result<Option<Vec<u32>>> {
        let clusters = poisson_count(1.0, rng)?;
        let mut masks = Vec::new();
        for _ in 0..clusters {
            let cloud = ParticleCloud::single(x, set.eps_mass)?;
            match evolve(dom, Level::Outer, &cloud, &ZeroField, &opts, cfg, rng) {
                Ok(ev) => {
                    let m = cap_mask(targets, &ev.exit.atoms);
                    if m != 0 {
                        masks.push(m);
                    }
                }
                Err(Error::PopulationCap { .. }) => return Ok(None),
                Err(e) => return Err(e),
            }
        }
        Ok(Some(masks))
    });
    let mut sample = HitSample { targets: targets.to_vec(), masks: Vec::new(), flagged: Vec::new(), eps_mass: set.eps_mass };
    for (r, m) in runs.into_iter().enumerate() {
        match m? {
            Some(m) => sample.masks.push(m),
            None => sample.flagged.push(r as u64),
        }
    }
    if sample.replicas() < 2 {
        return Err(Error::Numerical("fewer than 2 replicas survived the population cap".into()));
    }
    Ok(sample)
}

fn poisson_count<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> Result<u64> {
    Ok(Poisson::new(mean).map_err(|e| Error::InvalidParameter(e.to_string()))?.sample(rng) as u64)
}

/// Caps `Δ(z_i, ε)` around the given boundary points.
pub fn caps(centers: &[Point], eps: f64) -> Vec<BoundaryTarget> {
    centers.iter().enumerate().map(|(i, c)| BoundaryTarget { center: *c, eps, index: i + 1 }).collect()
}

/// `v̂_ε^A` and `û_ε^A` for every nonempty `A` of disjoint caps `Δ(z_i, ε)`.
pub fn estimate_hits(
    dom: &DomainModel,
    x: &Point,
    centers: &[Point],
    eps: f64,
    set: &ReplicaSettings,
    cfg: &PathConfig,
) -> Result<(HitSample, Vec<HitEstimate>)> {
    let targets = caps(centers, eps);
    validate_targets(dom, &targets, true)?;
    let sample = sample_hits(dom, x, &targets, set, cfg)?;
    let est = sample.estimates()?;
    Ok((sample, est))
}

/// Hits of nested caps `Δ(z, ε_j)` around one boundary point, from one run.
#[derive(Clone, Debug, Serialize)]
pub struct CapScan {
    pub x: Point,
    pub z: Point,
    pub eps: Vec<f64>,
    pub hits: Vec<u64>,
    pub v: Vec<Inverted>,
    pub replicas: usize,
    pub eps_mass: f64,
}

/// Runs one set of replicas from `x` and counts hits of every cap `Δ(z, ε_j)`.
pub fn scan_caps(
    dom: &DomainModel,
    x: &Point,
    z: &Point,
    eps_list: &[f64],
    set: &ReplicaSettings,
    cfg: &PathConfig,
) -> Result<CapScan> {
    if eps_list.is_empty() {
        return Err(Error::InvalidParameter("empty ε list".into()));
    }
    let targets: Vec<BoundaryTarget> =
        eps_list.iter().enumerate().map(|(i, &eps)| BoundaryTarget { center: *z, eps, index: i + 1 }).collect();
    validate_targets(dom, &targets[..1], false)?;
    let sample = sample_hits(dom, x, &targets, set, cfg)?;
    let idx: Vec<usize> = (0..targets.len()).collect();
    scan_from_sample(&sample, x, &idx)
}

/// The scan carried by targets `idx` (0-based) of a sample, which must share one center.
pub fn scan_from_sample(sample: &HitSample, x: &Point, idx: &[usize]) -> Result<CapScan> {
    let n = sample.targets.len();
    let Some(&first) = idx.first() else {
        return Err(Error::InvalidParameter("no targets selected".into()));
    };
    if idx.iter().any(|&i| i >= n) {
        return Err(Error::InvalidParameter(format!("target index out of range for {n} targets")));
    }
    let z = sample.targets[first].center;
    if idx.iter().any(|&i| sample.targets[i].center != z) {
        return Err(Error::InvalidParameter("selected caps have different centers".into()));
    }
    let hits: Vec<u64> =
        idx.iter().map(|&i| SubsetId::singleton(i + 1, n).map(|a| sample.count_all(a))).collect::<Result<_>>()?;
    let v = hits.iter().map(|&h| sample.invert(h)).collect();
    let eps = idx.iter().map(|&i| sample.targets[i].eps).collect();
    Ok(CapScan { x: *x, z, eps, hits, v, replicas: sample.replicas(), eps_mass: sample.eps_mass })
}

fn check_dyadic(eps_list: &[f64]) -> Result<()> {
    for w in eps_list.windows(2) {
        if ((w[1] - 0.5 * w[0]) / w[0]).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!("ε list must halve at each step, got {} then {}", w[0], w[1])));
        }
    }
    Ok(())
}

/// One `ε` of a bracket check.
#[derive(Clone, Debug, Serialize)]
pub struct BracketRow {
    pub eps: f64,
    pub hits: u64,
    pub v: Inverted,
    /// Harmonic measure `m_x(Δ_ε)` by quadrature.
    pub harmonic: f64,
    pub rho: f64,
    pub rho_se: f64,
    /// Dropped for too large a relative error.
    pub excluded: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct BracketReport {
    pub rows: Vec<BracketRow>,
    /// `ρ(ε)/ρ(ε/2)` over consecutive retained rows.
    pub ratios: Vec<f64>,
    /// Least-squares slope of `log v̂_ε` against `log ε` over retained rows.
    pub scaling_exponent: f64,
    pub band: (f64, f64),
    pub stable: bool,
}

/// `ρ(ε) = v̂_ε(x)·ε²/m_x(Δ_ε)` over a dyadic `ε` list.
pub fn bracket_check(dom: &DomainModel, scan: &CapScan) -> Result<BracketReport> {
    if dom.dim < 4 {
        return Err(Error::InvalidParameter(format!("small-cap asymptotics need d ≥ 4, got {}", dom.dim)));
    }
    check_dyadic(&scan.eps)?;
    let mut rows = Vec::new();
    for (j, &eps) in scan.eps.iter().enumerate() {
        let t = BoundaryTarget { center: scan.z, eps, index: j + 1 };
        let harmonic = harmonic_measure_cap(dom, &scan.x, &t)?;
        let v = scan.v[j];
        let scale = eps * eps / harmonic;
        let excluded = v.upper_bound_only || !(v.se / v.value <= MAX_BRACKET_REL_SE);
        rows.push(BracketRow { eps, hits: scan.hits[j], v, harmonic, rho: v.value * scale, rho_se: v.se * scale, excluded });
    }
    let kept: Vec<&BracketRow> = rows.iter().filter(|r| !r.excluded).collect();
    let ratios: Vec<f64> = kept.windows(2).map(|w| w[0].rho / w[1].rho).collect();
    let scaling_exponent = if kept.len() >= 2 {
        let xs: Vec<f64> = kept.iter().map(|r| r.eps.ln()).collect();
        let ys: Vec<f64> = kept.iter().map(|r| r.v.value.ln()).collect();
        let mx = xs.iter().sum::<f64>() / xs.len() as f64;
        let my = ys.iter().sum::<f64>() / ys.len() as f64;
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        sxy / sxx
    } else {
        f64::NAN
    };
    let stable = kept.len() >= 2 && ratios.iter().all(|q| (BRACKET_BAND.0..=BRACKET_BAND.1).contains(q));
    Ok(BracketReport { rows, ratios, scaling_exponent, band: BRACKET_BAND, stable })
}

#[derive(Clone, Debug, Serialize)]
pub struct MartinRow {
    pub eps: f64,
    pub ratio: f64,
    pub ratio_se: f64,
    pub hits_x: u64,
    pub hits_y: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct MartinReport {
    pub rows: Vec<MartinRow>,
    /// `K_x(y, z)`.
    pub kernel: f64,
    /// `|ratio/K - 1|` at the smallest `ε`.
    pub final_deviation: f64,
    /// Deviations from `K` decrease as `ε` decreases.
    pub monotone: bool,
    pub pass: bool,
}

/// `v̂_ε(y)/v̂_ε(x)` against `K_x(y, z)` from scans at `x` and `y` over the same `ε` list.
pub fn martin_ratio(dom: &DomainModel, at_x: &CapScan, at_y: &CapScan) -> Result<MartinReport> {
    if at_x.eps != at_y.eps || at_x.z != at_y.z {
        return Err(Error::InvalidParameter("scans must share the pole and the ε list".into()));
    }
    let z = at_x.z;
    for (p, eps) in [(&at_x.x, at_x.eps[0]), (&at_y.x, at_y.eps[0])] {
        if p.dist(&z) <= eps {
            return Err(Error::InvalidParameter(format!("point {p:?} lies within the largest cap")));
        }
    }
    let kernel = martin_kernel(dom, &at_x.x, &at_y.x, &z)?;
    let rows: Vec<MartinRow> = (0..at_x.eps.len())
        .map(|j| {
            let (vx, vy) = (at_x.v[j], at_y.v[j]);
            let ratio = vy.value / vx.value;
            let rel = ((vx.se / vx.value).powi(2) + (vy.se / vy.value).powi(2)).sqrt();
            let ratio_se = if at_x.x == at_y.x { 0.0 } else { ratio * rel };
            MartinRow { eps: at_x.eps[j], ratio, ratio_se, hits_x: at_x.hits[j], hits_y: at_y.hits[j] }
        })
        .collect();
    let devs: Vec<f64> = rows.iter().map(|r| (r.ratio / kernel - 1.0).abs()).collect();
    let final_deviation = *devs.last().expect("nonempty ε list");
    let monotone = devs.windows(2).all(|w| w[1] <= w[0]);
    let pass = final_deviation < MARTIN_TOLERANCE;
    Ok(MartinReport { rows, kernel, final_deviation, monotone, pass })
}

/// `N_x(exp(-λ⟨X^k,1⟩) | every cap charged)` at fixed `ε`.
#[derive(Clone, Debug, Serialize)]
pub struct ConditionedLaplace {
    pub lambdas: Vec<f64>,
    pub values: Vec<EstimatorResult>,
    /// Clusters charging every cap.
    pub hits: u64,
    /// Fewer than the minimum number of hits; standard errors doubled.
    pub flagged: bool,
    pub replicas: usize,
}

/// Conditional Laplace functionals of `⟨X^k,1⟩` given that both caps are
/// charged, as ratios of cluster sums over `εδ_x` replicas.
#[allow(clippy::too_many_arguments)]
pub fn conditioned_laplace_at_eps(
    dom: &DomainModel,
    x: &Point,
    centers: &[Point],
    eps: f64,
    lambdas: &[f64],
    level: Level,
    set: &ReplicaSettings,
    cfg: &PathConfig,
) -> Result<ConditionedLaplace> {
    if centers.len() != 2 {
        return Err(Error::InvalidParameter(format!("need two caps, got {}", centers.len())));
    }
    if let Some(l) = lambdas.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
        return Err(Error::InvalidParameter(format!("λ must be finite and nonnegative, got {l}")));
    }
    if level == Level::Outer {
        return Err(Error::InvalidParameter("the functional lives on a proper subdomain D_k".into()));
    }
    let targets = caps(centers, eps);
    validate_targets(dom, &targets, true)?;
    dom.check_interior(x, level)?;
    cfg.validate(dom.dim)?;
    let opts = EvolveOptions { population_cap: set.population_cap, ..Default::default() };
    let both = 0b11u32;
    let runs = par_replicas(set.reps, set.seed, tag("conditioned"), |_, rng| -> Result<Option<Vec<f64>>> {
        let mut row = vec![0.0; lambdas.len() + 1];
        for _ in 0..poisson_count(1.0, rng)? {
            let cloud = ParticleCloud::single(x, set.eps_mass)?;
            let inner = match evolve(dom, level, &cloud, &ZeroField, &opts, cfg, rng) {
                Ok(ev) => ev.exit,
                Err(Error::PopulationCap { .. }) => return Ok(None),
                Err(e) => return Err(e),
            };
            if inner.atoms.is_empty() {
                continue;
            }
            let mut next = ParticleCloud::new(set.eps_mass)?;
            next.particles.extend(inner.atoms.iter().map(|p| Particle { pos: *p, lineage: 0 }));
            let outer = match evolve(dom, Level::Outer, &next, &ZeroField, &opts, cfg, rng) {
                Ok(ev) => ev.exit,
                Err(Error::PopulationCap { .. }) => return Ok(None),
                Err(e) => return Err(e),
            };
            if cap_mask(&targets, &outer.atoms) & both == both {
                let y = inner.total_mass();
                for (s, l) in row.iter_mut().zip(lambdas) {
                    *s += (-l * y).exp();
                }
                row[lambdas.len()] += 1.0;
            }
        }
        Ok(Some(row))
    });
    let mut rows = Vec::new();
    for r in runs {
        if let Some(row) = r? {
            rows.push(row);
        }
    }
    let hits = rows.iter().map(|r| r[lambdas.len()]).sum::<f64>() as u64;
    let flagged = hits < MIN_CONDITIONED_HITS;
    let widen = if flagged { 2.0 } else { 1.0 };
    let values = lambdas
        .iter()
        .enumerate()
        .map(|(j, &l)| {
            if l == 0.0 {
                return EstimatorResult::exact(1.0, EstimatorKind::Direct);
            }
            if hits == 0 {
                return EstimatorResult::new(f64::NAN, f64::NAN, rows.len(), EstimatorKind::Direct);
            }
            let (m, se) = jackknife(
                rows.len(),
                JACKKNIFE_GROUPS,
                |r| vec![rows[r][j], rows[r][lambdas.len()]],
                |s, _| s[0] / s[1],
            );
            EstimatorResult::new(m, widen * se, rows.len(), EstimatorKind::Direct)
        })
        .collect();
    Ok(ConditionedLaplace { lambdas: lambdas.to_vec(), values, hits, flagged, replicas: rows.len() })
}

/// One draw of the conditioned exit measure from a finitely-atomic `μ`.
#[derive(Clone, Debug, Serialize)]
pub struct ForestSample {
    /// `X^k = X_0^k + Σ_{B∈γ} X_B^k`.
    pub exit: ExitMeasureSample,
    /// The ancestral partition `γ`.
    pub gamma: Partition,
    /// Block and start atom of each backbone.
    pub starts: Vec<(SubsetId, usize)>,
    /// `⟨X_0^k, 1⟩`.
    pub free_mass: f64,
    /// `Σ_B ⟨X_B^k, 1⟩`.
    pub backbone_mass: f64,
    /// Backbone time inside `D_k`, summed over all trees.
    pub inside_time: f64,
}

/// Probabilities of the ancestral partitions, `∝ Π_{B∈γ} ⟨μ, v^B⟩`.
pub fn forest_partition_weights(vf: &VFamily, mu: &[(Point, f64)]) -> Result<Vec<(Partition, f64)>> {
    let mass = |b: SubsetId| mu.iter().map(|(p, w)| w * vf.value(b, p)).sum::<f64>();
    let raw: Vec<(Partition, f64)> = enumerate_partitions(vf.full())?
        .into_iter()
        .map(|s| {
            let w = s.blocks().iter().map(|b| mass(*b)).product();
            (s, w)
        })
        .collect();
    let total: f64 = raw.iter().map(|p| p.1).sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::DegenerateTarget(format!("partition weights sum to {total}")));
    }
    Ok(raw.into_iter().map(|(s, w)| (s, w / total)).collect())
}

fn pick<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

/// Samples `X^k` under the multi-point conditioning from `μ = Σ_j w_j δ_{a_j}`:
/// an ancestral partition, one backbone per block started from an atom drawn
/// by `w_j v^B(a_j)`, and an independent unconditioned exit from `μ`.
pub fn forest_sample<R: Rng + ?Sized>(
    vf: &VFamily,
    mu: &[(Point, f64)],
    level: Level,
    eps_mass: f64,
    population_cap: usize,
    cfg: &PathConfig,
    rng: &mut R,
) -> Result<ForestSample> {
    if vf.n() > 2 {
        return Err(Error::InvalidParameter(format!("forests need n ≤ 2, got {}", vf.n())));
    }
    if mu.is_empty() || mu.iter().any(|(_, w)| !(*w > 0.0 && w.is_finite())) {
        return Err(Error::DegenerateTarget("μ needs atoms with positive finite weights".into()));
    }
    let dom = &vf.dom;
    for (p, _) in mu {
        dom.check_interior(p, level)?;
    }
    let weights = forest_partition_weights(vf, mu)?;
    let probs: Vec<f64> = weights.iter().map(|p| p.1).collect();
    let gamma = weights[pick(&probs, rng)].0.clone();
    let mut atoms = Vec::new();
    let mut starts = Vec::new();
    let mut inside_time = 0.0;
    for &b in gamma.blocks() {
        let w: Vec<f64> = mu.iter().map(|(p, m)| m * vf.value(b, p)).collect();
        let j = pick(&w, rng);
        let tree = sample_backbone_from(vf, b, &mu[j].0, cfg, rng)?;
        let run = immigrate(tree, vf, level, eps_mass, population_cap, cfg, rng)?;
        inside_time += run.inside_time;
        atoms.extend_from_slice(&run.y.atoms);
        starts.push((b, j));
    }
    let backbone_atoms = atoms.len();
    let opts = EvolveOptions { population_cap, ..Default::default() };
    for (p, m) in mu {
        let cloud = ParticleCloud::poisson(p, *m, eps_mass, rng)?;
        let ev = evolve(dom, level, &cloud, vf.g().as_ref(), &opts, cfg, rng)?;
        atoms.extend_from_slice(&ev.exit.atoms);
    }
    let free_mass = (atoms.len() - backbone_atoms) as f64 * eps_mass;
    let backbone_mass = backbone_atoms as f64 * eps_mass;
    Ok(ForestSample {
        exit: ExitMeasureSample { atoms, mass: eps_mass, level, replica: 0, seed: 0 },
        gamma,
        starts,
        free_mass,
        backbone_mass,
        inside_time,
    })
}
