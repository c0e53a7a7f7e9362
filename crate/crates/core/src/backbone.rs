//! The backbone of the exit measure conditioned to charge `n` boundary points.
//!
//! A `v^N`-particle moves as the `v^N`-transform of `L_{4g}`, dies in the
//! interior when `|N| ≥ 2` and splits its label by `p(A,N)(y) ∝ v^A v^{N∖A}(y)`;
//! singleton particles are Martin-type transforms that exit `∂D` at their
//! target. Mass of size `ε` is thrown off at rate `4/ε` along the tree while
//! the lineage is inside `D_k` and evolves as the pruned particle system.

use crate::diffusion::{sample_h_exit, sample_v_death, PathConfig, SampledPath, Terminal};
use crate::error::{Error, Result};
use crate::geometry::{Ball, DomainModel, Level, Point};
use crate::partitions::{Partition, SubsetId};
use crate::pde::vfamily::VFamily;
use crate::rng::{par_replicas, tag};
use crate::stats::{mean_se, EstimatorKind, EstimatorResult};
use crate::superprocess::{evolve, EvolveOptions, ExitMeasureSample, ParticleCloud, ReplicaSettings};
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::Serialize;

/// Retries of a `v`-transformed path that reaches `∂D` before dying.
pub const MAX_REJECTIONS: usize = 1000;

/// How a backbone particle ends.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum NodeEnd {
    InteriorDeath { time: f64, point: Point },
    BoundaryExit { time: f64, point: Point },
}

impl NodeEnd {
    pub fn time(&self) -> f64 {
        match self {
            NodeEnd::InteriorDeath { time, .. } | NodeEnd::BoundaryExit { time, .. } => *time,
        }
    }
    pub fn point(&self) -> Point {
        match self {
            NodeEnd::InteriorDeath { point, .. } | NodeEnd::BoundaryExit { point, .. } => *point,
        }
    }
}

/// One particle of the backbone.
#[derive(Clone, Debug, Serialize)]
pub struct BackboneNode {
    pub label: SubsetId,
    pub birth_time: f64,
    pub birth_point: Point,
    pub end: NodeEnd,
    pub parent: Option<usize>,
    pub children: Option<(usize, usize)>,
    /// Trajectory with absolute times.
    pub path: SampledPath,
    /// Paths that reached `∂D` before dying and were resampled.
    pub rejections: usize,
    /// One uniform per path step for the bridge crossing test of `∂D_k`;
    /// shared by all levels so partitions refine monotonically.
    #[serde(skip)]
    pub bridge_u: Vec<f64>,
}

/// The backbone tree; node 0 is the root.
#[derive(Clone, Debug, Serialize)]
pub struct BackboneTree {
    pub nodes: Vec<BackboneNode>,
    pub n: usize,
}

impl BackboneTree {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn interior_deaths(&self) -> usize {
        self.nodes.iter().filter(|b| matches!(b.end, NodeEnd::InteriorDeath { .. })).count()
    }

    pub fn leaves(&self) -> impl Iterator<Item = (usize, &BackboneNode)> {
        self.nodes.iter().enumerate().filter(|(_, b)| b.children.is_none())
    }

    pub fn rejections(&self) -> usize {
        self.nodes.iter().map(|b| b.rejections).sum()
    }

    /// Label of the root particle.
    pub fn root(&self) -> SubsetId {
        self.nodes.first().map_or(SubsetId::EMPTY, |b| b.label)
    }

    /// Checks node counts, labels and the parent–child links.
    pub fn check(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Numerical(format!("backbone invariant: {m}")));
        let m = self.root().len();
        if m == 0 || self.node_count() != 2 * m - 1 || self.interior_deaths() != m - 1 {
            return fail(format!("{} nodes, {} interior deaths for root {}", self.node_count(), self.interior_deaths(), self.root()));
        }
        let mut seen = SubsetId::EMPTY;
        for (_, leaf) in self.leaves() {
            if leaf.label.len() != 1 || seen.intersection(leaf.label) != SubsetId::EMPTY {
                return fail(format!("leaf label {}", leaf.label));
            }
            seen = seen.union(leaf.label);
        }
        if seen != self.root() {
            return fail(format!("leaf labels cover {seen}"));
        }
        for b in &self.nodes {
            match (b.label.len() == 1, b.end, b.children) {
                (true, NodeEnd::BoundaryExit { .. }, None) => {}
                (false, NodeEnd::InteriorDeath { time, point }, Some((l, r))) => {
                    let (cl, cr) = (&self.nodes[l], &self.nodes[r]);
                    if cl.label.union(cr.label) != b.label || cl.label.intersection(cr.label) != SubsetId::EMPTY {
                        return fail(format!("children of {} do not split it", b.label));
                    }
                    if cl.birth_point != point || cr.birth_point != point || cl.birth_time != time || cr.birth_time != time {
                        return fail(format!("children of {} are not born at its death", b.label));
                    }
                }
                _ => return fail(format!("node {} has the wrong ending", b.label)),
            }
        }
        Ok(())
    }
}

/// Samples the backbone from `x` for the family `vf`.
pub fn sample_backbone<R: Rng + ?Sized>(vf: &VFamily, x: &Point, cfg: &PathConfig, rng: &mut R) -> Result<BackboneTree> {
    sample_backbone_from(vf, vf.full(), x, cfg, rng)
}

/// Samples the `v^B`-backbone from `x`, whose leaves carry the labels of `B`.
pub fn sample_backbone_from<R: Rng + ?Sized>(
    vf: &VFamily,
    root: SubsetId,
    x: &Point,
    cfg: &PathConfig,
    rng: &mut R,
) -> Result<BackboneTree> {
    let dom = &vf.dom;
    dom.check_interior(x, Level::Outer)?;
    cfg.validate(dom.dim)?;
    if root.is_empty() || !root.is_subset_of(vf.full()) {
        return Err(Error::InvalidSubset(format!("{root} is not a nonempty subset of the targets")));
    }
    let v = vf.value(root, x);
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::Divergent(format!("v^{root}(x) = {v}")));
    }
    let mut tree = BackboneTree { nodes: Vec::with_capacity(2 * root.len() - 1), n: vf.n() };
    let mut stack = vec![(root, 0.0, *x, None::<usize>)];
    while let Some((label, t0, y, parent)) = stack.pop() {
        let (mut path, rejections) = node_path(vf, label, &y, cfg, rng)?;
        for t in path.times.iter_mut() {
            *t += t0;
        }
        let end = match path.terminal {
            Terminal::ExitAt { point, time } => NodeEnd::BoundaryExit { time: time + t0, point },
            Terminal::DiedAt { point, time } => NodeEnd::InteriorDeath { time: time + t0, point },
            Terminal::Horizon { .. } => unreachable!("no horizon on backbone paths"),
        };
        path.terminal = match end {
            NodeEnd::BoundaryExit { time, point } => Terminal::ExitAt { point, time },
            NodeEnd::InteriorDeath { time, point } => Terminal::DiedAt { point, time },
        };
        let id = tree.nodes.len();
        let bridge_u = (0..path.positions.len()).map(|_| rng.random::<f64>()).collect();
        tree.nodes.push(BackboneNode {
            label,
            birth_time: t0,
            birth_point: y,
            end,
            parent,
            children: None,
            path,
            rejections,
            bridge_u,
        });
        if let Some(p) = parent {
            let c = &mut tree.nodes[p].children;
            *c = Some(match *c {
                None => (id, usize::MAX),
                Some((l, _)) => (l, id),
            });
        }
        if let NodeEnd::InteriorDeath { time, point } = end {
            let a = split_label(vf, label, &point, rng)?;
            stack.push((label.difference(a), time, point, Some(id)));
            stack.push((a, time, point, Some(id)));
        }
    }
    tree.check()?;
    Ok(tree)
}

fn node_path<R: Rng + ?Sized>(vf: &VFamily, label: SubsetId, y: &Point, cfg: &PathConfig, rng: &mut R) -> Result<(SampledPath, usize)> {
    if label.len() == 1 {
        let h = vf.singleton(label.min_elem().expect("nonempty"));
        return Ok((sample_h_exit(&vf.dom, y, h.as_ref(), cfg, rng)?, 0));
    }
    let v = vf.potential(label)?;
    for r in 0..=MAX_REJECTIONS {
        if let Some(p) = sample_v_death(&vf.dom, y, &v, cfg, rng)? {
            return Ok((p, r));
        }
    }
    Err(Error::Numerical(format!("v^{label} path reached the boundary {MAX_REJECTIONS} times")))
}

/// Draws the ordered label `A` of the first child with probability `p(A, N)(y)`.
fn split_label<R: Rng + ?Sized>(vf: &VFamily, label: SubsetId, y: &Point, rng: &mut R) -> Result<SubsetId> {
    let w = vf.split_weights(label, y);
    let total: f64 = w.iter().map(|p| p.1).sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::Numerical(format!("split weights of {label} sum to {total}")));
    }
    let mut u = rng.random::<f64>() * total;
    for (a, p) in &w {
        if u < *p {
            return Ok(*a);
        }
        u -= p;
    }
    Ok(w.last().expect("nonempty").0)
}

/// Splitting probabilities `p(A, N)(y)` over ordered nonempty proper `A`.
pub fn split_probabilities(vf: &VFamily, label: SubsetId, y: &Point) -> Vec<(SubsetId, f64)> {
    let w = vf.split_weights(label, y);
    let total: f64 = w.iter().map(|p| p.1).sum();
    w.into_iter().map(|(a, p)| (a, p / total)).collect()
}

/// Where a node's path first leaves `D_k`: `(step index, time)` with the
/// step index `i` such that the crossing happens during `[t_{i-1}, t_i]`.
///
/// A step between two inside points crosses when its uniform falls below the
/// Brownian-bridge crossing probability `exp(-2 a b / h)` of the tangent
/// half-space, `a` and `b` being the endpoint depths.
fn first_crossing(node: &BackboneNode, ball: &Ball) -> Option<(usize, f64)> {
    let pos = &node.path.positions;
    let times = &node.path.times;
    if !ball.contains(&pos[0]) {
        return Some((0, times[0]));
    }
    for i in 1..pos.len() {
        let (a, b) = (pos[i - 1], pos[i]);
        let h = times[i] - times[i - 1];
        if !ball.contains(&b) {
            let c = ball.segment_exit(&a, &b);
            let len = a.dist(&b);
            let f = if len > 0.0 { (a.dist(&c) / len).clamp(0.0, 1.0) } else { 1.0 };
            return Some((i, times[i - 1] + f * h));
        }
        if h > 0.0 {
            let p = (-2.0 * ball.depth(&a) * ball.depth(&b) / h).exp();
            if node.bridge_u[i] < p {
                return Some((i, times[i - 1] + 0.5 * h));
            }
        }
    }
    None
}

/// Per-node portion of the tree inside `D_k`: `None` once the lineage has
/// left, otherwise the time at which it leaves during this node (or the
/// node's end if it does not).
fn inside_until(tree: &BackboneTree, ball: &Ball) -> Result<Vec<Option<f64>>> {
    let mut out: Vec<Option<f64>> = vec![None; tree.nodes.len()];
    let mut crossed = vec![false; tree.nodes.len()];
    for (i, b) in tree.nodes.iter().enumerate() {
        if b.parent.is_some_and(|p| crossed[p]) {
            crossed[i] = true;
            continue;
        }
        match first_crossing(b, ball) {
            Some((_, t)) => {
                crossed[i] = true;
                out[i] = Some(t);
            }
            None => {
                if b.children.is_none() {
                    return Err(Error::Numerical(format!("lineage of leaf {} never left D_k", b.label)));
                }
                out[i] = Some(b.end.time());
            }
        }
    }
    Ok(out)
}

/// The partition of `N` by ancestors at the first crossing of `∂D_k`.
pub fn classify_partition(tree: &BackboneTree, dom: &DomainModel, level: Level) -> Result<Partition> {
    let ball = dom.ball_at(level)?;
    let mut crossed = vec![false; tree.nodes.len()];
    let mut blocks = Vec::new();
    for (i, b) in tree.nodes.iter().enumerate() {
        if b.parent.is_some_and(|p| crossed[p]) {
            crossed[i] = true;
            continue;
        }
        if first_crossing(b, &ball).is_some() {
            crossed[i] = true;
            blocks.push(b.label);
        } else if b.children.is_none() {
            return Err(Error::Numerical(format!("lineage of leaf {} never left D_k", b.label)));
        }
    }
    Partition::new(blocks)
}

/// One immigrant cluster with a nonempty exit measure.
#[derive(Clone, Debug, Serialize)]
pub struct Cluster {
    pub birth_time: f64,
    pub birth_point: Point,
    pub node: usize,
    pub exit: ExitMeasureSample,
}

/// A backbone with its immigrant mass on `∂D_k`.
#[derive(Clone, Debug, Serialize)]
pub struct BackboneRun {
    pub tree: BackboneTree,
    pub level: Level,
    pub partition: Partition,
    /// Immigrant clusters that reached `∂D_k`.
    pub clusters: Vec<Cluster>,
    /// All seeds, including those that died out.
    pub seeds: u64,
    /// Backbone time spent inside `D_k`, summed over particles.
    pub inside_time: f64,
    /// `Y^k`, the sum of the cluster exit measures.
    pub y: ExitMeasureSample,
}

/// Throws off mass along the part of the tree inside `D_k`.
///
/// Seeds of mass `ε` appear at rate `4/ε` per particle, uniformly within
/// each path step at the linearly interpolated position, and evolve as the
/// particle system pruned at rate `4g`.
pub fn immigrate<R: Rng + ?Sized>(
    tree: BackboneTree,
    vf: &VFamily,
    level: Level,
    eps_mass: f64,
    population_cap: usize,
    cfg: &PathConfig,
    rng: &mut R,
) -> Result<BackboneRun> {
    if !(eps_mass > 0.0 && eps_mass.is_finite()) {
        return Err(Error::InvalidParameter(format!("ε must be positive, got {eps_mass}")));
    }
    let dom = &vf.dom;
    let ball = dom.ball_at(level)?;
    let until = inside_until(&tree, &ball)?;
    let partition = classify_partition(&tree, dom, level)?;
    let g = vf.g().as_ref();
    let opts = EvolveOptions { population_cap, ..Default::default() };
    let rate = 4.0 / eps_mass;
    let mut clusters = Vec::new();
    let mut seeds = 0;
    let mut inside_time = 0.0;
    let mut atoms = Vec::new();
    for (id, b) in tree.nodes.iter().enumerate() {
        let Some(stop) = until[id] else { continue };
        inside_time += stop - b.birth_time;
        let (ts, ps) = (&b.path.times, &b.path.positions);
        for i in 1..ts.len() {
            let (t0, t1) = (ts[i - 1], ts[i].min(stop));
            if t1 <= t0 {
                break;
            }
            let mean = rate * (t1 - t0);
            let count = Poisson::new(mean).map(|d| d.sample(rng) as u64).unwrap_or(0);
            for _ in 0..count {
                let u = rng.random::<f64>();
                let t = t0 + u * (t1 - t0);
                let f = (t - ts[i - 1]) / (ts[i] - ts[i - 1]);
                let y = ps[i - 1] + (ps[i] - ps[i - 1]) * f;
                if !ball.contains(&y) {
                    continue;
                }
                seeds += 1;
                let cloud = ParticleCloud::single(&y, eps_mass)?;
                let ev = evolve(dom, level, &cloud, g, &opts, cfg, rng)?;
                if !ev.exit.atoms.is_empty() {
                    atoms.extend_from_slice(&ev.exit.atoms);
                    clusters.push(Cluster { birth_time: t, birth_point: y, node: id, exit: ev.exit });
                }
            }
        }
    }
    let y = ExitMeasureSample { atoms, mass: eps_mass, level, replica: 0, seed: 0 };
    Ok(BackboneRun { tree, level, partition, clusters, seeds, inside_time, y })
}

/// Per-replica summary of a backbone run.
#[derive(Clone, Debug, Serialize)]
pub struct BackboneSummary {
    pub replica: u64,
    /// Partition at the run's level.
    pub partition: String,
    /// Partitions at every level `1..=K` of the domain, for refinement checks.
    pub partitions_by_level: Vec<String>,
    pub deaths: Vec<Point>,
    pub total_mass: f64,
    pub clusters: usize,
    pub seeds: u64,
    pub inside_time: f64,
    pub node_count: usize,
    pub interior_deaths: usize,
    pub rejections: usize,
    /// The first split of an `n = 2` tree, as the first child's label.
    pub first_split: Option<String>,
    /// Every level's partition refines the previous one.
    pub refines: bool,
    /// The leaves carry the singletons of `N`, each once, and the tree passes [`BackboneTree::check`].
    pub leaves_cover: bool,
}

/// Laplace functionals of `Y^k` and their per-partition parts.
#[derive(Clone, Debug, Serialize)]
pub struct BackboneLaplace {
    pub lambdas: Vec<f64>,
    /// `E exp(-λ⟨Y^k,1⟩)` for each `λ`.
    pub totals: Vec<EstimatorResult>,
    /// `E[exp(-λ⟨Y^k,1⟩); partition = σ]` for each `λ` and each partition of `N`.
    pub by_partition: Vec<Vec<(String, EstimatorResult)>>,
    pub summaries: Vec<BackboneSummary>,
    /// Replicas aborted by the population cap or a backbone failure.
    pub aborted: Vec<u64>,
}

/// Runs `set.reps` independent backbones from `x` and estimates the Laplace
/// functionals `E exp(-λ⟨Y^k,1⟩)` for all `λ` on the same replicas.
pub fn backbone_laplace(
    vf: &VFamily,
    level: Level,
    x: &Point,
    lambdas: &[f64],
    set: &ReplicaSettings,
    cfg: &PathConfig,
) -> Result<BackboneLaplace> {
    if let Some(l) = lambdas.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
        return Err(Error::InvalidParameter(format!("λ must be finite and nonnegative, got {l}")));
    }
    if level == Level::Outer {
        return Err(Error::InvalidParameter("immigration needs a proper subdomain D_k".into()));
    }
    vf.dom.check_interior(x, level)?;
    let dom = &vf.dom;
    let levels = dom.num_levels();
    let runs = par_replicas(set.reps, set.seed, tag("backbone"), |r, rng| -> Result<Option<BackboneSummary>> {
        let tree = match sample_backbone(vf, x, cfg, rng) {
            Ok(t) => t,
            Err(Error::Numerical(_)) => return Ok(None),
            Err(e) => return Err(e),
        };
        let mut parts = Vec::with_capacity(levels);
        for k in 1..=levels {
            parts.push(classify_partition(&tree, dom, Level::Sub(k))?);
        }
        let refines = parts.windows(2).all(|w| refines(&w[1], &w[0]));
        let run = match immigrate(tree, vf, level, set.eps_mass, set.population_cap, cfg, rng) {
            Ok(run) => run,
            Err(Error::PopulationCap { .. }) => return Ok(None),
            Err(e) => return Err(e),
        };
        let t = &run.tree;
        let leaves_cover = t.root() == vf.full() && t.check().is_ok();
        let first_split = t.nodes[0].children.filter(|_| t.n == 2).map(|(l, _)| t.nodes[l].label.to_string());
        Ok(Some(BackboneSummary {
            replica: r,
            partition: run.partition.to_string(),
            partitions_by_level: parts.iter().map(|p| p.to_string()).collect(),
            deaths: t
                .nodes
                .iter()
                .filter_map(|b| match b.end {
                    NodeEnd::InteriorDeath { point, .. } => Some(point),
                    _ => None,
                })
                .collect(),
            total_mass: run.y.total_mass(),
            clusters: run.clusters.len(),
            seeds: run.seeds,
            inside_time: run.inside_time,
            node_count: t.node_count(),
            interior_deaths: t.interior_deaths(),
            rejections: t.rejections(),
            first_split,
            refines,
            leaves_cover,
        }))
    });
    let mut summaries = Vec::new();
    let mut aborted = Vec::new();
    for (r, s) in runs.into_iter().enumerate() {
        match s? {
            Some(s) => summaries.push(s),
            None => aborted.push(r as u64),
        }
    }
    if summaries.len() < 2 {
        return Err(Error::Numerical("fewer than 2 backbone replicas succeeded".into()));
    }
    let sigmas: Vec<String> =
        crate::partitions::enumerate_partitions(vf.full())?.iter().map(|p| p.to_string()).collect();
    let mut totals = Vec::new();
    let mut by_partition = Vec::new();
    for &lambda in lambdas {
        let vals: Vec<f64> = summaries.iter().map(|s| (-lambda * s.total_mass).exp()).collect();
        totals.push(laplace_result(&vals, lambda));
        let parts = sigmas
            .iter()
            .map(|sigma| {
                let vals: Vec<f64> = summaries
                    .iter()
                    .map(|s| if &s.partition == sigma { (-lambda * s.total_mass).exp() } else { 0.0 })
                    .collect();
                let (m, se) = mean_se(&vals);
                (sigma.clone(), EstimatorResult::new(m, se, vals.len(), EstimatorKind::Direct))
            })
            .collect();
        by_partition.push(parts);
    }
    Ok(BackboneLaplace { lambdas: lambdas.to_vec(), totals, by_partition, summaries, aborted })
}

fn laplace_result(vals: &[f64], lambda: f64) -> EstimatorResult {
    if lambda == 0.0 {
        return EstimatorResult::exact(1.0, EstimatorKind::Direct);
    }
    let (m, se) = mean_se(vals);
    EstimatorResult::new(m, se, vals.len(), EstimatorKind::Direct)
}

/// `E exp(-λ⟨Y^k,1⟩)` from `set.reps` backbone replicas.
#[allow(non_snake_case)]
pub fn laplace_Y(
    vf: &VFamily,
    level: Level,
    x: &Point,
    lambda: f64,
    set: &ReplicaSettings,
    cfg: &PathConfig,
) -> Result<EstimatorResult> {
    Ok(backbone_laplace(vf, level, x, &[lambda], set, cfg)?.totals.remove(0))
}

/// Whether every block of `fine` lies inside a block of `coarse`.
pub fn refines(fine: &Partition, coarse: &Partition) -> bool {
    fine.blocks().iter().all(|b| coarse.blocks().iter().any(|c| b.is_subset_of(*c)))
}
