//! The family `v^A`, `∅ ≠ A ⊆ N`: singletons are positive `L_{4g}`-harmonic
//! functions and `v^A = 2 Σ_B U^{4g}(v^B v^{A\B})` for `|A| ≥ 2`.
//!
//! The fields are invariant under rotations fixing the target directions, so
//! each `v^A` is solved in reduced coordinates `(p_1..p_s, b)`, where `p_j`
//! are coordinates along an orthonormal frame of the target directions and
//! `b` is the distance from their span. In these coordinates the Laplacian is
//! `Σ ∂²_{p_j} + ∂²_b + (q/b) ∂_b` with `q = d - s - 1`.
//!
//! The Poisson problems `(½Δ - 4g) v^A = -f^A`, `v^A = 0` on `∂D`, are solved by
//! successive over-relaxation with Shortley–Weller stencils at the sphere.
//! Interpolation acts on `W = v / (1 - ρ²)`, which stays smooth and positive
//! up to the boundary.

use super::radial::{killed_harmonic_profile, HermiteTable};
use super::{potential_apply, FieldSymmetry, NonlinearField};
use crate::diffusion::{HarmonicField, Killing, MartinField, PathConfig, PotentialField, TransformSpec, Walker};
use crate::error::{Error, Result};
use crate::geometry::{Ball, DomainModel, Level, Point};
use crate::partitions::SubsetId;
use crate::rng::{par_replicas, tag};
use crate::stats::{mean_se, z_score};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

/// Grid and solver parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// Grid spacing relative to the domain radius.
    #[serde(default = "default_h")]
    pub h: f64,
    /// Relative update size at which relaxation stops.
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_sweeps")]
    pub max_sweeps: usize,
}

fn default_h() -> f64 {
    0.02
}
fn default_tol() -> f64 {
    1e-11
}
fn default_sweeps() -> usize {
    200_000
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { h: default_h(), tol: default_tol(), max_sweeps: default_sweeps() }
    }
}

/// Which positive `L_{4g}`-harmonic functions serve as singletons.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SingletonKind {
    /// Martin kernels `K_{x₀}(·, z_i)`; requires `g = 0`.
    #[default]
    Martin,
    /// The radial solution of `½Δφ = 4gφ` normalized at `x₀`; requires radial `g`.
    /// For `g = 0` this is `φ ≡ 1`.
    Radial,
}

/// Radial `L_{4g}`-harmonic function normalized at a base point.
#[derive(Clone, Debug)]
pub struct RadialHarmonic {
    center: Point,
    radius: f64,
    table: Option<HermiteTable>,
    norm: f64,
}

impl RadialHarmonic {
    fn radial(&self, r: f64) -> (f64, f64) {
        match &self.table {
            None => (1.0, 0.0),
            Some(t) => {
                let rm = t.r_max();
                if r <= rm {
                    let [f, df, _] = t.eval(r);
                    (f, df)
                } else {
                    let [f, _, _] = t.eval(rm);
                    let dd = (self.radius - r).max(1e-300);
                    let fr = f * ((self.radius - rm) / dd).powi(3);
                    (fr, 3.0 * fr / dd)
                }
            }
        }
    }
}

impl HarmonicField for RadialHarmonic {
    fn value(&self, y: &Point) -> f64 {
        self.radial(y.dist(&self.center)).0 / self.norm
    }
    fn log_gradient(&self, y: &Point) -> Point {
        let rel = *y - self.center;
        let r = rel.norm();
        if r < 1e-300 {
            return Point::zeros(y.dim());
        }
        let (f, df) = self.radial(r);
        rel * (df / (f * r))
    }
}

/// Orthonormal frame of the reduced coordinates.
#[derive(Clone, Debug, PartialEq)]
struct Frame {
    center: Point,
    radius: f64,
    basis: Vec<Point>,
    q: f64,
}

impl Frame {
    fn new(dom: &DomainModel, dirs: &[Point]) -> Result<Frame> {
        let mut basis: Vec<Point> = Vec::new();
        for z in dirs {
            let mut v = *z;
            for e in &basis {
                v = v - *e * v.dot(e);
            }
            let n = v.norm();
            if n > 1e-9 * z.norm().max(1.0) {
                basis.push(v * (1.0 / n));
            }
        }
        if basis.len() > 2 {
            return Err(Error::Unsupported(
                "gridded families need targets spanning at most two directions from the center".into(),
            ));
        }
        let q = (dom.dim - basis.len() - 1) as f64;
        Ok(Frame { center: dom.center, radius: dom.radius, basis, q })
    }

    fn s(&self) -> usize {
        self.basis.len()
    }

    /// Reduced coordinates `(p, b)` and the unit vector along the perpendicular part.
    fn reduce(&self, y: &Point) -> ([f64; 3], Option<Point>) {
        let rel = (*y - self.center) * (1.0 / self.radius);
        let mut c = [0.0; 3];
        let mut perp = rel;
        for (j, e) in self.basis.iter().enumerate() {
            c[j] = rel.dot(e);
            perp = perp - *e * c[j];
        }
        let b = perp.norm();
        c[self.s()] = b;
        (c, if b > 1e-300 { Some(perp * (1.0 / b)) } else { None })
    }

    /// A full-space point with the given reduced coordinates.
    fn lift(&self, c: &[f64]) -> Point {
        let d = self.center.dim();
        let mut rel = Point::zeros(d);
        for (j, e) in self.basis.iter().enumerate() {
            rel += *e * c[j];
        }
        let b = c[self.s()];
        if b != 0.0 {
            rel += self.perp_unit() * b;
        }
        self.center + rel * self.radius
    }

    fn perp_unit(&self) -> Point {
        let d = self.center.dim();
        for i in 0..d {
            let mut v = Point::axis(d, i, 1.0);
            for e in &self.basis {
                v = v - *e * v.dot(e);
            }
            let n = v.norm();
            if n > 0.5 {
                return v * (1.0 / n);
            }
        }
        let mut v = Point::axis(d, d - 1, 1.0);
        for e in &self.basis {
            v = v - *e * v.dot(e);
        }
        v * (1.0 / v.norm())
    }
}

/// Regular grid over `[-1-h, 1+h]^s × [0, 1+h]` in reduced coordinates.
#[derive(Clone, Debug, PartialEq)]
struct Grid {
    h: f64,
    s: usize,
    np: usize,
    nb: usize,
}

impl Grid {
    fn new(h_rel: f64, s: usize) -> Result<Grid> {
        if !(h_rel > 0.0 && h_rel <= 0.25) {
            return Err(Error::InvalidParameter(format!("grid spacing {h_rel} outside (0, 0.25]")));
        }
        let m = (1.0 / h_rel).round() as usize;
        let h = 1.0 / m as f64;
        Ok(Grid { h, s, np: 2 * m + 3, nb: m + 2 })
    }

    fn len(&self) -> usize {
        self.np.pow(self.s as u32) * self.nb
    }

    fn shape(&self) -> [usize; 3] {
        let mut sh = [1; 3];
        for j in 0..self.s {
            sh[j] = self.np;
        }
        sh[self.s] = self.nb;
        sh
    }

    fn origin(&self, axis: usize) -> f64 {
        if axis < self.s {
            -1.0 - self.h
        } else {
            0.0
        }
    }

    fn strides(&self) -> [usize; 3] {
        let sh = self.shape();
        let mut st = [0; 3];
        let mut acc = 1;
        for a in (0..=self.s).rev() {
            st[a] = acc;
            acc *= sh[a];
        }
        st
    }

    fn coords(&self, mut idx: usize) -> [f64; 3] {
        let sh = self.shape();
        let mut c = [0.0; 3];
        for a in (0..=self.s).rev() {
            let i = idx % sh[a];
            idx /= sh[a];
            c[a] = self.origin(a) + i as f64 * self.h;
        }
        c
    }

    fn indices(&self, mut idx: usize) -> [usize; 3] {
        let sh = self.shape();
        let mut ix = [0; 3];
        for a in (0..=self.s).rev() {
            ix[a] = idx % sh[a];
            idx /= sh[a];
        }
        ix
    }
}

fn rho2(c: &[f64; 3], s: usize) -> f64 {
    (0..=s).map(|a| c[a] * c[a]).sum()
}

const INTERIOR_MARGIN: f64 = 1e-9;

/// Sparse row of the discrete operator at an interior node.
#[derive(Clone, Debug)]
struct Row {
    node: usize,
    diag: f64,
    nbrs: Vec<(usize, f64)>,
}

/// Assembles `-(Δ_red)` with Shortley–Weller boundary treatment; Dirichlet zero on the sphere.
fn assemble(grid: &Grid, q: f64) -> (Vec<Row>, Vec<i64>) {
    let st = grid.strides();
    let sh = grid.shape();
    let s = grid.s;
    let h = grid.h;
    let mut rows = Vec::new();
    let mut row_of = vec![-1i64; grid.len()];
    let interior = |c: &[f64; 3]| rho2(c, s) < (1.0 - INTERIOR_MARGIN).powi(2);
    for idx in 0..grid.len() {
        let c = grid.coords(idx);
        if !interior(&c) {
            continue;
        }
        let ix = grid.indices(idx);
        let r2 = rho2(&c, s);
        let mut diag = 0.0;
        let mut nbrs = Vec::with_capacity(2 * (s + 1));
        for a in 0..=s {
            let reach = (1.0 - r2 + c[a] * c[a]).max(0.0).sqrt();
            let to_plus = reach - c[a];
            let to_minus = reach + c[a];
            let plus_in = ix[a] + 1 < sh[a] && {
                let mut cp = c;
                cp[a] += h;
                interior(&cp)
            };
            let (hr, right) = if plus_in { (h, Some(idx + st[a])) } else { (to_plus.clamp(1e-12, h), None) };
            let is_axis = a == s && ix[a] == 0;
            if is_axis {
                let k = 2.0 * (1.0 + q) / (hr * hr);
                diag += k;
                if let Some(r) = right {
                    nbrs.push((r, k));
                }
                continue;
            }
            let minus_in = ix[a] > 0 && {
                let mut cm = c;
                cm[a] -= h;
                interior(&cm)
            };
            let (hl, left) = if minus_in { (h, Some(idx - st[a])) } else { (to_minus.clamp(1e-12, h), None) };
            let (cr, cl) = if a == s && q > 0.0 {
                let b = c[a];
                let f = 2.0 / ((hl + hr) * b.powf(q));
                (f * (b + 0.5 * hr).powf(q) / hr, f * (b - 0.5 * hl).powf(q) / hl)
            } else {
                (2.0 / (hr * (hl + hr)), 2.0 / (hl * (hl + hr)))
            };
            let c0 = -(cr + cl);
            diag -= c0;
            if let Some(r) = right {
                nbrs.push((r, cr));
            }
            if let Some(l) = left {
                nbrs.push((l, cl));
            }
        }
        row_of[idx] = rows.len() as i64;
        rows.push(Row { node: idx, diag, nbrs });
    }
    (rows, row_of)
}

/// Solves `(-Δ_red + κ) v = rhs` on interior nodes by SOR; returns nodal values (zero outside).
fn solve_sor(grid: &Grid, rows: &[Row], kappa: &[f64], rhs: &[f64], spec: &GridSpec) -> Result<Vec<f64>> {
    let mut v = vec![0.0; grid.len()];
    let omega = 2.0 / (1.0 + (std::f64::consts::PI * grid.h / 2.0).sin());
    let diag: Vec<f64> = rows.iter().map(|r| r.diag + kappa[r.node]).collect();
    for _sweep in 0..spec.max_sweeps {
        let mut max_dv: f64 = 0.0;
        let mut max_v: f64 = 0.0;
        for (r, dg) in rows.iter().zip(&diag) {
            let mut acc = rhs[r.node];
            for &(j, c) in &r.nbrs {
                acc += c * v[j];
            }
            let new = acc / dg;
            let dv = omega * (new - v[r.node]);
            v[r.node] += dv;
            max_dv = max_dv.max(dv.abs());
            max_v = max_v.max(v[r.node].abs());
        }
        if !max_v.is_finite() {
            return Err(Error::Numerical("relaxation diverged".into()));
        }
        if max_dv <= spec.tol * max_v.max(1e-300) {
            return Ok(v);
        }
    }
    Err(Error::Numerical(format!("relaxation did not converge in {} sweeps", spec.max_sweeps)))
}

/// Converts nodal `v` to nodal `W = v / (1 - ρ²)`, extrapolating near and beyond the sphere.
fn to_w(grid: &Grid, v: &[f64]) -> Vec<f64> {
    let s = grid.s;
    let n = grid.len();
    let mut w = vec![f64::NAN; n];
    let deep = |c: &[f64; 3]| rho2(c, s).sqrt() <= 1.0 - grid.h;
    for idx in 0..n {
        let c = grid.coords(idx);
        if deep(&c) {
            w[idx] = v[idx] / (1.0 - rho2(&c, s));
        }
    }
    let sh = grid.shape();
    let st = grid.strides();
    for idx in 0..n {
        if !w[idx].is_nan() {
            continue;
        }
        let c = grid.coords(idx);
        if rho2(&c, s).sqrt() > 1.0 + 2.0 * grid.h {
            w[idx] = 0.0;
            continue;
        }
        let ix = grid.indices(idx);
        let mut reach = 3i64;
        loop {
            let mut pts: Vec<([f64; 3], f64)> = Vec::new();
            let mut off = [0i64; 3];
            let span = 2 * reach + 1;
            let total = (span as usize).pow((s + 1) as u32);
            for t in 0..total {
                let mut tt = t;
                let mut ok = true;
                let mut j = 0usize;
                for a in 0..=s {
                    off[a] = (tt % span as usize) as i64 - reach;
                    tt /= span as usize;
                    let k = ix[a] as i64 + off[a];
                    if k < 0 || k >= sh[a] as i64 {
                        ok = false;
                        break;
                    }
                    j += k as usize * st[a];
                }
                if ok && !w[j].is_nan() && deep(&grid.coords(j)) {
                    let cj = grid.coords(j);
                    let mut dx = [0.0; 3];
                    for a in 0..=s {
                        dx[a] = cj[a] - c[a];
                    }
                    pts.push((dx, w[j]));
                }
            }
            if pts.len() >= 2 * (s + 2) || reach > 8 {
                w[idx] = linear_fit_at_origin(&pts, s + 1).max(0.0);
                break;
            }
            reach += 2;
        }
    }
    w
}

/// Value at the origin of the least-squares affine fit to `(dx, y)` samples.
fn linear_fit_at_origin(pts: &[([f64; 3], f64)], dims: usize) -> f64 {
    let m = dims + 1;
    if pts.len() < m {
        return pts.iter().map(|p| p.1).sum::<f64>() / pts.len().max(1) as f64;
    }
    let mut ata = vec![vec![0.0; m]; m];
    let mut atb = vec![0.0; m];
    for (dx, y) in pts {
        let mut row = vec![1.0];
        row.extend_from_slice(&dx[..dims]);
        for i in 0..m {
            atb[i] += row[i] * y;
            for j in 0..m {
                ata[i][j] += row[i] * row[j];
            }
        }
    }
    for i in 0..m {
        let p = ata[i][i];
        if p.abs() < 1e-300 {
            return pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
        }
        for k in i + 1..m {
            let f = ata[k][i] / p;
            for j in i..m {
                ata[k][j] -= f * ata[i][j];
            }
            atb[k] -= f * atb[i];
        }
    }
    let mut x = vec![0.0; m];
    for i in (0..m).rev() {
        let mut s = atb[i];
        for j in i + 1..m {
            s -= ata[i][j] * x[j];
        }
        x[i] = s / ata[i][i];
    }
    x[0]
}

/// The family `v^A` over all nonempty `A ⊆ N`.
#[derive(Clone)]
pub struct VFamily {
    pub dom: DomainModel,
    pub base: Point,
    pub targets: Vec<Point>,
    pub singleton_kind: SingletonKind,
    pub grid_spec: GridSpec,
    g: Arc<dyn NonlinearField>,
    singletons: Vec<Arc<dyn HarmonicField>>,
    frame: Frame,
    grid: Grid,
    w: BTreeMap<SubsetId, Vec<f64>>,
}

impl std::fmt::Debug for VFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("VFamily")
            .field("dim", &self.dom.dim)
            .field("targets", &self.targets.len())
            .field("g", &self.g.name())
            .field("grid_h", &self.grid.h)
            .finish()
    }
}

impl VFamily {
    pub fn n(&self) -> usize {
        self.singletons.len()
    }

    pub fn full(&self) -> SubsetId {
        SubsetId::full(self.n()).expect("family size within limits")
    }

    pub fn g(&self) -> &Arc<dyn NonlinearField> {
        &self.g
    }

    pub fn singleton(&self, i: usize) -> &Arc<dyn HarmonicField> {
        &self.singletons[i - 1]
    }

    /// Reduced dimension of the grids.
    pub fn grid_dims(&self) -> usize {
        self.grid.s + 1
    }

    fn interp(&self, data: &[f64], c: &[f64; 3]) -> (f64, [f64; 3]) {
        let s = self.grid.s;
        let sh = self.grid.shape();
        let st = self.grid.strides();
        let h = self.grid.h;
        let mut i0 = [0usize; 3];
        let mut t = [0.0; 3];
        for a in 0..=s {
            let u = (c[a] - self.grid.origin(a)) / h;
            let k = (u.floor() as i64).clamp(0, sh[a] as i64 - 2) as usize;
            i0[a] = k;
            t[a] = (u - k as f64).clamp(0.0, 1.0);
        }
        let mut val = 0.0;
        let mut grad = [0.0; 3];
        for corner in 0..(1usize << (s + 1)) {
            let mut j = 0;
            let mut wt = 1.0;
            let mut dw = [1.0; 3];
            for a in 0..=s {
                let bit = (corner >> a) & 1;
                j += (i0[a] + bit) * st[a];
                let f = if bit == 1 { t[a] } else { 1.0 - t[a] };
                let df = if bit == 1 { 1.0 } else { -1.0 } / h;
                wt *= f;
                for b in 0..=s {
                    dw[b] *= if a == b { df } else { f };
                }
            }
            let x = data[j];
            val += wt * x;
            for a in 0..=s {
                grad[a] += dw[a] * x;
            }
        }
        (val, grad)
    }

    /// `v^A(y)`; zero outside `D` for `|A| ≥ 2`.
    pub fn value(&self, a: SubsetId, y: &Point) -> f64 {
        if a.len() == 1 {
            return self.singletons[a.min_elem().unwrap() - 1].value(y);
        }
        let (c, _) = self.frame.reduce(y);
        let phi = 1.0 - rho2(&c, self.grid.s);
        if phi <= 0.0 {
            return 0.0;
        }
        phi * self.interp(&self.w[&a], &c).0.max(0.0)
    }

    /// `∇ log v^A(y)`.
    pub fn log_gradient(&self, a: SubsetId, y: &Point) -> Point {
        if a.len() == 1 {
            return self.singletons[a.min_elem().unwrap() - 1].log_gradient(y);
        }
        let (c, perp) = self.frame.reduce(y);
        let s = self.grid.s;
        let phi = 1.0 - rho2(&c, s);
        let (w, gw) = self.interp(&self.w[&a], &c);
        let rel = (*y - self.frame.center) * (1.0 / self.frame.radius);
        let mut g = rel * (-2.0 / phi);
        if w > 0.0 {
            for (j, e) in self.frame.basis.iter().enumerate() {
                g += *e * (gw[j] / w);
            }
            if let Some(u) = perp {
                g += u * (gw[s] / w);
            }
        }
        g * (1.0 / self.frame.radius)
    }

    /// `∇ v^A(y)`.
    pub fn gradient(&self, a: SubsetId, y: &Point) -> Point {
        self.log_gradient(a, y) * self.value(a, y)
    }

    /// Ordered splits `(B, A\B)` with weights `v^B(y) v^{A\B}(y)`.
    pub fn split_weights(&self, a: SubsetId, y: &Point) -> Vec<(SubsetId, f64)> {
        let mut cache: BTreeMap<SubsetId, f64> = BTreeMap::new();
        let mut val = |b: SubsetId| *cache.entry(b).or_insert_with(|| self.value(b, y));
        a.proper_nonempty_subsets().into_iter().map(|b| (b, val(b) * val(a.difference(b)))).collect()
    }

    /// `f^A(y) = 2 Σ_B v^B(y) v^{A\B}(y)` over ordered nonempty proper `B`.
    pub fn source(&self, a: SubsetId, y: &Point) -> f64 {
        2.0 * self.split_weights(a, y).iter().map(|p| p.1).sum::<f64>()
    }

    /// `v^A` as a transform with interior death, for `|A| ≥ 2`.
    pub fn potential(&self, a: SubsetId) -> Result<VPotential<'_>> {
        if a.len() < 2 || !a.is_subset_of(self.full()) {
            return Err(Error::InvalidParameter(format!("{a} is not a gridded subset of the family")));
        }
        Ok(VPotential { vf: self, a })
    }
}

/// `v^A` viewed as a potential field.
pub struct VPotential<'a> {
    vf: &'a VFamily,
    a: SubsetId,
}

impl PotentialField for VPotential<'_> {
    fn value(&self, y: &Point) -> f64 {
        self.vf.value(self.a, y)
    }
    fn log_gradient(&self, y: &Point) -> Point {
        self.vf.log_gradient(self.a, y)
    }
    fn death_rate(&self, y: &Point) -> f64 {
        let v = self.vf.value(self.a, y);
        if v <= 0.0 {
            return 0.0;
        }
        self.vf.source(self.a, y) / v
    }
}

const CACHE_MAGIC: &[u8; 4] = b"VFAM";
const CACHE_VERSION: u32 = 1;

fn cache_key(
    dom: &DomainModel,
    base: &Point,
    targets: &[Point],
    g: &dyn NonlinearField,
    kind: SingletonKind,
    spec: &GridSpec,
) -> [u8; 32] {
    let desc = serde_json::json!({
        "version": CACHE_VERSION,
        "domain": dom,
        "base": base,
        "targets": targets,
        "g": g.name(),
        "singletons": kind,
        "grid": spec,
    });
    Sha256::digest(desc.to_string().as_bytes()).into()
}

fn cache_path(dir: &Path, key: &[u8; 32]) -> PathBuf {
    let hex: String = key[..8].iter().map(|b| format!("{b:02x}")).collect();
    dir.join(format!("vfamily-{hex}.bin"))
}

fn write_cache(path: &Path, key: &[u8; 32], w: &BTreeMap<SubsetId, Vec<f64>>) -> Result<()> {
    if let Some(p) = path.parent() {
        std::fs::create_dir_all(p)?;
    }
    let mut buf = Vec::new();
    buf.extend_from_slice(CACHE_MAGIC);
    buf.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    buf.extend_from_slice(key);
    buf.extend_from_slice(&(w.len() as u32).to_le_bytes());
    for (a, data) in w {
        buf.extend_from_slice(&a.bits().to_le_bytes());
        buf.extend_from_slice(&(data.len() as u64).to_le_bytes());
        for x in data {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    let tmp = path.with_extension("tmp");
    std::fs::File::create(&tmp)?.write_all(&buf)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn read_cache(path: &Path, key: &[u8; 32], n: usize, len: usize) -> Result<BTreeMap<SubsetId, Vec<f64>>> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    let mut pos = 0usize;
    let mut take = |k: usize| -> Result<&[u8]> {
        if pos + k > buf.len() {
            return Err(Error::Cache("truncated cache file".into()));
        }
        pos += k;
        Ok(&buf[pos - k..pos])
    };
    if take(4)? != CACHE_MAGIC {
        return Err(Error::Cache("bad magic".into()));
    }
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != CACHE_VERSION {
        return Err(Error::Cache(format!("cache version {version}, expected {CACHE_VERSION}")));
    }
    if take(32)? != key {
        return Err(Error::Cache("cache key mismatch".into()));
    }
    let count = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let mut out = BTreeMap::new();
    for _ in 0..count {
        let bits = u16::from_le_bytes(take(2)?.try_into().unwrap());
        let a = SubsetId::from_bits(bits, n).map_err(|e| Error::Cache(e.to_string()))?;
        let m = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        if m != len {
            return Err(Error::Cache("grid size mismatch".into()));
        }
        let mut data = Vec::with_capacity(m);
        for _ in 0..m {
            data.push(f64::from_le_bytes(take(8)?.try_into().unwrap()));
        }
        out.insert(a, data);
    }
    Ok(out)
}

/// Where a family may be cached.
#[derive(Clone, Debug, Default)]
pub struct CacheOptions {
    pub dir: Option<PathBuf>,
    pub rebuild: bool,
}

fn singleton_fields(
    dom: &DomainModel,
    base: &Point,
    targets: &[Point],
    g: &dyn NonlinearField,
    kind: SingletonKind,
) -> Result<Vec<Arc<dyn HarmonicField>>> {
    match kind {
        SingletonKind::Martin => {
            if !g.is_zero() {
                return Err(Error::InvalidParameter("Martin-kernel singletons require g = 0".into()));
            }
            targets
                .iter()
                .map(|z| Ok(Arc::new(MartinField::new(dom, base, z)?) as Arc<dyn HarmonicField>))
                .collect()
        }
        SingletonKind::Radial => {
            let table = match g.symmetry() {
                FieldSymmetry::Constant if g.is_zero() => None,
                FieldSymmetry::Radial { center } if center == dom.center => {
                    let dir = Point::axis(dom.dim, 0, 1.0);
                    let r_max = dom.radius * (1.0 - 1e-6);
                    Some(killed_harmonic_profile(dom.dim, r_max, |r| g.value(&(center + dir * r)))?)
                }
                _ => {
                    return Err(Error::Unsupported(format!(
                        "radial singletons need g = 0 or a field radial about the domain center, got {}",
                        g.name()
                    )))
                }
            };
            let mut f = RadialHarmonic { center: dom.center, radius: dom.radius, table, norm: 1.0 };
            f.norm = f.value(base);
            let f: Arc<dyn HarmonicField> = Arc::new(f);
            Ok(vec![f; targets.len()])
        }
    }
}

/// Solves all `v^A`, `|A| ≥ 2`, on one grid and returns nodal `v` values.
fn solve_family(
    frame: &Frame,
    grid: &Grid,
    g: &dyn NonlinearField,
    singletons: &[Arc<dyn HarmonicField>],
    spec: &GridSpec,
) -> Result<BTreeMap<SubsetId, Vec<f64>>> {
    let n = singletons.len();
    let (rows, _) = assemble(grid, frame.q);
    let r2 = frame.radius * frame.radius;
    let points: Vec<Point> = rows.iter().map(|r| frame.lift(&grid.coords(r.node))).collect();
    let mut kappa = vec![0.0; grid.len()];
    if !g.is_zero() {
        for (r, p) in rows.iter().zip(&points) {
            kappa[r.node] = 8.0 * r2 * g.value(p);
        }
    }
    let mut nodal: BTreeMap<SubsetId, Vec<f64>> = BTreeMap::new();
    for i in 1..=n {
        let mut v = vec![0.0; grid.len()];
        for (r, p) in rows.iter().zip(&points) {
            v[r.node] = singletons[i - 1].value(p);
        }
        nodal.insert(SubsetId::singleton(i, n)?, v);
    }
    let full = SubsetId::full(n)?;
    let mut order: Vec<SubsetId> = full.nonempty_subsets().into_iter().filter(|a| a.len() >= 2).collect();
    order.sort_by_key(|a| a.len());
    for a in order {
        let mut rhs = vec![0.0; grid.len()];
        for r in &rows {
            let mut f = 0.0;
            for b in a.proper_nonempty_subsets() {
                f += nodal[&b][r.node] * nodal[&a.difference(b)][r.node];
            }
            rhs[r.node] = 2.0 * r2 * 2.0 * f;
        }
        let v = solve_sor(grid, &rows, &kappa, &rhs, spec)?;
        nodal.insert(a, v);
    }
    Ok(nodal)
}

/// Builds the family for the given targets and field.
///
/// Coincident targets make `v^A` infinite and are reported as divergence; the
/// same report is raised when the base value of `v^N` grows by more than a
/// factor 1.8 from the half-resolution grid to the working grid.
pub fn build_vfamily(
    dom: &DomainModel,
    base: &Point,
    targets: &[Point],
    g: Arc<dyn NonlinearField>,
    kind: SingletonKind,
    spec: &GridSpec,
    cache: &CacheOptions,
) -> Result<VFamily> {
    dom.check_interior(base, Level::Outer)?;
    let n = targets.len();
    if n == 0 || n > 3 {
        return Err(Error::Unsupported(format!("families need 1 to 3 targets, got {n}")));
    }
    for (i, z) in targets.iter().enumerate() {
        dom.check_point(z)?;
        if (z.dist(&dom.center) - dom.radius).abs() > 1e-9 * dom.radius {
            return Err(Error::DegenerateTarget(format!("target {} is not on the boundary", i + 1)));
        }
        for (j, w) in targets.iter().enumerate().take(i) {
            if z.dist(w) < 1e-12 * dom.radius && kind == SingletonKind::Martin {
                return Err(Error::Divergent(format!(
                    "targets {} and {} coincide, so v^{{{},{}}} = ∞",
                    j + 1,
                    i + 1,
                    j + 1,
                    i + 1
                )));
            }
        }
    }
    let singletons = singleton_fields(dom, base, targets, g.as_ref(), kind)?;
    let dirs: Vec<Point> = match kind {
        SingletonKind::Martin => targets.iter().map(|z| *z - dom.center).collect(),
        SingletonKind::Radial => Vec::new(),
    };
    let frame = Frame::new(dom, &dirs)?;
    let grid = Grid::new(spec.h, frame.s())?;
    let key = cache_key(dom, base, targets, g.as_ref(), kind, spec);
    let path = cache.dir.as_ref().map(|d| cache_path(d, &key));
    let mut vf = VFamily {
        dom: dom.clone(),
        base: *base,
        targets: targets.to_vec(),
        singleton_kind: kind,
        grid_spec: *spec,
        g: g.clone(),
        singletons: singletons.clone(),
        frame: frame.clone(),
        grid: grid.clone(),
        w: BTreeMap::new(),
    };
    if n == 1 {
        return Ok(vf);
    }
    if let (Some(p), false) = (&path, cache.rebuild) {
        if p.exists() {
            if let Ok(w) = read_cache(p, &key, n, grid.len()) {
                vf.w = w;
                return Ok(vf);
            }
        }
    }
    let nodal = solve_family(&frame, &grid, g.as_ref(), &singletons, spec)?;
    let w: BTreeMap<SubsetId, Vec<f64>> =
        nodal.iter().filter(|(a, _)| a.len() >= 2).map(|(a, v)| (*a, to_w(&grid, v))).collect();
    vf.w = w;
    let coarse_spec = GridSpec { h: 2.0 * grid.h, ..*spec };
    if coarse_spec.h <= 0.25 {
        let coarse_grid = Grid::new(coarse_spec.h, frame.s())?;
        let coarse = solve_family(&frame, &coarse_grid, g.as_ref(), &singletons, &coarse_spec)?;
        let mut cvf = vf.clone();
        cvf.grid = coarse_grid.clone();
        cvf.w = coarse.iter().filter(|(a, _)| a.len() >= 2).map(|(a, v)| (*a, to_w(&coarse_grid, v))).collect();
        let full = vf.full();
        let (fine_val, coarse_val) = (vf.value(full, base), cvf.value(full, base));
        if !(fine_val.is_finite()) || fine_val > 1.8 * coarse_val {
            return Err(Error::Divergent(format!(
                "v^{full} at the base point grows from {coarse_val:.4e} to {fine_val:.4e} under refinement"
            )));
        }
    }
    if let Some(p) = &path {
        write_cache(p, &key, &vf.w)?;
    }
    Ok(vf)
}

/// One residual comparison at a probe.
#[derive(Clone, Debug, Serialize)]
pub struct ResidualProbe {
    pub subset: String,
    pub point: Point,
    pub interpolated: f64,
    pub fresh: f64,
    pub se: f64,
    pub rel: f64,
}

/// One sphere-mean check of a singleton.
#[derive(Clone, Debug, Serialize)]
pub struct HarmonicProbe {
    pub index: usize,
    pub point: Point,
    pub value: f64,
    pub sphere_mean: f64,
    pub se: f64,
    pub z: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ResidualReport {
    pub recursion: Vec<ResidualProbe>,
    pub harmonic: Vec<HarmonicProbe>,
    pub max_rel: f64,
    pub max_abs_z: f64,
    /// `v^A(y) ≤ v^i(y)` for all `i ∈ A` at every probe.
    pub bound_holds: bool,
}

/// Recomputes the recursion by fresh Monte Carlo at off-grid probes and checks
/// singleton harmonicity by killed sphere means.
pub fn vfamily_residual(
    vf: &VFamily,
    probes: &[Point],
    reps: usize,
    cfg: &PathConfig,
    seed: u64,
) -> Result<ResidualReport> {
    let full = vf.full();
    let mut recursion = Vec::new();
    let mut harmonic = Vec::new();
    let mut bound_holds = true;
    for (pi, y) in probes.iter().enumerate() {
        vf.dom.check_interior(y, Level::Outer)?;
        for a in full.nonempty_subsets() {
            if a.len() < 2 {
                continue;
            }
            let interp = vf.value(a, y);
            for i in a.elems() {
                if interp > vf.value(SubsetId::singleton(i, vf.n())?, y) * (1.0 + 1e-12) {
                    bound_holds = false;
                }
            }
            let fresh = potential_apply(
                &vf.dom,
                Level::Outer,
                vf.g.as_ref(),
                |p: &Point| vf.source(a, p),
                y,
                reps,
                cfg,
                seed ^ ((pi as u64) << 20) ^ a.bits() as u64,
            )?;
            let rel = (fresh.value - interp).abs() / interp.abs().max(1e-300);
            recursion.push(ResidualProbe {
                subset: a.to_string(),
                point: *y,
                interpolated: interp,
                fresh: fresh.value,
                se: fresh.se,
                rel,
            });
        }
        for i in 1..=vf.n() {
            let h = vf.singleton(i).clone();
            let ball = Ball { center: *y, radius: 0.5 * vf.dom.outer().depth(y) };
            let walker = Walker::new(ball, TransformSpec::Plain, Killing::Weight(vf.g.as_ref()), *cfg);
            let vals = par_replicas(reps, seed ^ ((pi as u64) << 24), tag("sphere_mean") ^ i as u64, |_, rng| {
                walker.run(y, 0.0, rng, |_| {}).map(|(t, lw, _)| lw.exp() * h.value(&ball.project(&t.point())))
            });
            let vals: Vec<f64> = vals.into_iter().collect::<Result<_>>()?;
            let (m, se) = mean_se(&vals);
            let value = h.value(y);
            harmonic.push(HarmonicProbe { index: i, point: *y, value, sphere_mean: m, se, z: z_score(m, se, value, 0.0) });
        }
    }
    let max_rel = recursion.iter().map(|r| r.rel).fold(0.0, f64::max);
    let max_abs_z = harmonic.iter().map(|h| h.z.abs()).fold(0.0, f64::max);
    Ok(ResidualReport { recursion, harmonic, max_rel, max_abs_z, bound_holds })
}
