//! Ball domains with closed-form kernels, nested subdomains, boundary caps and
//! exact exit sampling.

use crate::error::{Error, Result};
use crate::quadrature::{adaptive, gamma_half, sphere_area};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Sub};

/// Largest supported dimension.
pub const MAX_DIM: usize = 6;

/// A point of `R^d`, `3 <= d <= 6`, stored inline.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point {
    c: [f64; MAX_DIM],
    d: usize,
}

impl Point {
    pub fn zeros(d: usize) -> Self {
        assert!(d <= MAX_DIM, "dimension {d} exceeds {MAX_DIM}");
        Point { c: [0.0; MAX_DIM], d }
    }

    pub fn from_slice(xs: &[f64]) -> Self {
        let mut p = Point::zeros(xs.len());
        p.c[..xs.len()].copy_from_slice(xs);
        p
    }

    /// `s · e_i`.
    pub fn axis(d: usize, i: usize, s: f64) -> Self {
        let mut p = Point::zeros(d);
        p.c[i] = s;
        p
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.c[..self.d]
    }

    pub fn dot(&self, o: &Point) -> f64 {
        (0..self.d).map(|i| self.c[i] * o.c[i]).sum()
    }

    pub fn norm2(&self) -> f64 {
        self.dot(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm2().sqrt()
    }

    pub fn dist(&self, o: &Point) -> f64 {
        (*self - *o).norm()
    }

    /// Standard Gaussian vector.
    pub fn gaussian<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Self {
        let mut p = Point::zeros(d);
        for i in 0..d {
            p.c[i] = rng.sample(StandardNormal);
        }
        p
    }

    /// Uniform point on the unit sphere.
    pub fn uniform_direction<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Self {
        loop {
            let g = Point::gaussian(d, rng);
            let n = g.norm();
            if n > 1e-12 {
                return g * (1.0 / n);
            }
        }
    }
}

impl Index<usize> for Point {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.c[..self.d][i]
    }
}

impl IndexMut<usize> for Point {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.c[..self.d][i]
    }
}

impl Add for Point {
    type Output = Point;
    fn add(mut self, o: Point) -> Point {
        for i in 0..self.d {
            self.c[i] += o.c[i];
        }
        self
    }
}

impl AddAssign for Point {
    fn add_assign(&mut self, o: Point) {
        for i in 0..self.d {
            self.c[i] += o.c[i];
        }
    }
}

impl Sub for Point {
    type Output = Point;
    fn sub(mut self, o: Point) -> Point {
        for i in 0..self.d {
            self.c[i] -= o.c[i];
        }
        self
    }
}

impl Mul<f64> for Point {
    type Output = Point;
    fn mul(mut self, s: f64) -> Point {
        for i in 0..self.d {
            self.c[i] *= s;
        }
        self
    }
}

impl Serialize for Point {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(self.as_slice())
    }
}

impl<'de> Deserialize<'de> for Point {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v: Vec<f64> = Vec::deserialize(d)?;
        if v.is_empty() || v.len() > MAX_DIM {
            return Err(serde::de::Error::custom(format!("point must have 1..={MAX_DIM} coordinates")));
        }
        Ok(Point::from_slice(&v))
    }
}

/// A Euclidean ball.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ball {
    pub center: Point,
    pub radius: f64,
}

impl Ball {
    /// Signed distance to the sphere, positive inside.
    pub fn depth(&self, x: &Point) -> f64 {
        self.radius - x.dist(&self.center)
    }

    pub fn contains(&self, x: &Point) -> bool {
        self.depth(x) > 0.0
    }

    /// Radial projection onto the sphere.
    pub fn project(&self, x: &Point) -> Point {
        let r = *x - self.center;
        let n = r.norm();
        if n < 1e-300 {
            return self.center + Point::axis(x.dim(), 0, self.radius);
        }
        self.center + r * (self.radius / n)
    }

    /// First point where the segment from interior `x` to exterior `y` meets the sphere.
    pub fn segment_exit(&self, x: &Point, y: &Point) -> Point {
        let dx = *y - *x;
        let a = dx.norm2();
        let r = *x - self.center;
        let b = r.dot(&dx);
        let c = r.norm2() - self.radius * self.radius;
        let disc = (b * b - a * c).max(0.0);
        let t = ((-b + disc.sqrt()) / a).clamp(0.0, 1.0);
        self.project(&(*x + dx * t))
    }
}

/// Which model domain a ball represents.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DomainKind {
    /// Ball centered at the origin.
    UnitBall,
    /// Ball centered at `(0, ..., 0, c_d)` with `c_d` larger than its radius.
    HalfSpaceCap,
}

/// Index of an exit level: a nested subdomain `D_k` or the domain itself.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Level {
    /// `D_k`, 1-based.
    Sub(usize),
    /// `D`.
    Outer,
}

/// A ball domain with a schedule of concentric subdomains `D_1 ⊂ ... ⊂ D_K ⊂ D`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainModel {
    pub kind: DomainKind,
    pub dim: usize,
    pub center: Point,
    pub radius: f64,
    /// Radius fractions `r_1 < ... < r_K < 1`.
    pub schedule: Vec<f64>,
}

/// Default schedule `r_k = 1 - 2^{-k}`, `k = 1..=K`.
pub fn dyadic_schedule(k_max: usize) -> Vec<f64> {
    (1..=k_max).map(|k| 1.0 - 0.5f64.powi(k as i32)).collect()
}

impl DomainModel {
    /// Ball of radius `radius` centered at the origin, default schedule with `K = 4`.
    pub fn ball(dim: usize, radius: f64) -> Result<Self> {
        let dom = DomainModel {
            kind: DomainKind::UnitBall,
            dim,
            center: Point::zeros(dim),
            radius,
            schedule: dyadic_schedule(4),
        };
        dom.validate()?;
        Ok(dom)
    }

    pub fn unit_ball(dim: usize) -> Result<Self> {
        Self::ball(dim, 1.0)
    }

    /// Ball of radius `radius` centered at height `height` on the last axis.
    pub fn half_space_cap(dim: usize, height: f64, radius: f64) -> Result<Self> {
        let dom = DomainModel {
            kind: DomainKind::HalfSpaceCap,
            dim,
            center: Point::axis(dim, dim - 1, height),
            radius,
            schedule: dyadic_schedule(4),
        };
        dom.validate()?;
        Ok(dom)
    }

    pub fn with_schedule(mut self, schedule: Vec<f64>) -> Result<Self> {
        self.schedule = schedule;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(3..=MAX_DIM).contains(&self.dim) {
            return Err(Error::InvalidParameter(format!("dimension {} not in 3..=6", self.dim)));
        }
        if self.center.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: self.center.dim() });
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::InvalidParameter(format!("radius {} must be positive", self.radius)));
        }
        match self.kind {
            DomainKind::UnitBall => {
                if self.center.norm() != 0.0 {
                    return Err(Error::InvalidParameter("unit-ball domain must be centered at 0".into()));
                }
            }
            DomainKind::HalfSpaceCap => {
                let off_axis: f64 = (0..self.dim - 1).map(|i| self.center[i].abs()).sum();
                if off_axis != 0.0 || self.center[self.dim - 1] <= self.radius {
                    return Err(Error::InvalidParameter(
                        "half-space cap needs center (0,...,0,c) with c > radius".into(),
                    ));
                }
            }
        }
        if self.schedule.is_empty() {
            return Err(Error::InvalidParameter("empty subdomain schedule".into()));
        }
        let mut prev = 0.0;
        for &r in &self.schedule {
            if !(r > prev && r < 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "schedule must be strictly increasing in (0, 1): {:?}",
                    self.schedule
                )));
            }
            prev = r;
        }
        Ok(())
    }

    pub fn num_levels(&self) -> usize {
        self.schedule.len()
    }

    /// Radius of the given level.
    pub fn level_radius(&self, level: Level) -> Result<f64> {
        match level {
            Level::Outer => Ok(self.radius),
            Level::Sub(k) if k >= 1 && k <= self.schedule.len() => Ok(self.schedule[k - 1] * self.radius),
            Level::Sub(k) => Err(Error::InvalidParameter(format!(
                "level {k} outside 1..={}",
                self.schedule.len()
            ))),
        }
    }

    pub fn ball_at(&self, level: Level) -> Result<Ball> {
        Ok(Ball { center: self.center, radius: self.level_radius(level)? })
    }

    pub fn outer(&self) -> Ball {
        Ball { center: self.center, radius: self.radius }
    }

    pub fn check_point(&self, x: &Point) -> Result<()> {
        if x.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: x.dim() });
        }
        Ok(())
    }

    /// Checks that `x` lies strictly inside the given level.
    pub fn check_interior(&self, x: &Point, level: Level) -> Result<()> {
        self.check_point(x)?;
        if !self.ball_at(level)?.contains(x) {
            return Err(Error::OutsideDomain(format!("{:?} not inside level {level:?}", x.as_slice())));
        }
        Ok(())
    }

    /// Boundary point `center + R·u` for a direction `u` (normalized here).
    pub fn boundary_point(&self, u: &Point) -> Result<Point> {
        self.check_point(u)?;
        let n = u.norm();
        if n == 0.0 {
            return Err(Error::InvalidParameter("zero direction".into()));
        }
        Ok(self.center + *u * (self.radius / n))
    }
}

/// A boundary cap `Δ(z, ε) = B(z, ε) ∩ ∂D`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryTarget {
    pub center: Point,
    pub eps: f64,
    pub index: usize,
}

impl BoundaryTarget {
    pub fn contains(&self, zeta: &Point) -> bool {
        zeta.dist(&self.center) < self.eps
    }
}

/// Checks target centers lie on `∂D`, are pairwise distinct, and (if requested)
/// that `ε` is below half the minimum pairwise distance.
pub fn validate_targets(dom: &DomainModel, targets: &[BoundaryTarget], disjoint: bool) -> Result<()> {
    for t in targets {
        dom.check_point(&t.center)?;
        if (t.center.dist(&dom.center) - dom.radius).abs() > 1e-9 * dom.radius {
            return Err(Error::DegenerateTarget(format!("target {} not on the boundary", t.index)));
        }
        if !(t.eps > 0.0) {
            return Err(Error::DegenerateTarget(format!("target {} has nonpositive radius", t.index)));
        }
    }
    for i in 0..targets.len() {
        for j in i + 1..targets.len() {
            let dist = targets[i].center.dist(&targets[j].center);
            if dist < 1e-12 {
                return Err(Error::DegenerateTarget(format!(
                    "targets {} and {} coincide",
                    targets[i].index, targets[j].index
                )));
            }
            if disjoint && (targets[i].eps >= 0.5 * dist || targets[j].eps >= 0.5 * dist) {
                return Err(Error::DegenerateTarget(format!(
                    "caps {} and {} are not well separated",
                    targets[i].index, targets[j].index
                )));
            }
        }
    }
    Ok(())
}

fn fundamental(r: f64, d: usize) -> f64 {
    r.powi(2 - d as i32) / ((d - 2) as f64 * sphere_area(d))
}

/// Green function of `½Δ` killed on `∂D`, normalized so `∫G(x,y)dy = E_x τ_D`.
///
/// Returns `+∞` when `x = y`.
pub fn green(dom: &DomainModel, x: &Point, y: &Point) -> Result<f64> {
    dom.check_interior(x, Level::Outer)?;
    dom.check_interior(y, Level::Outer)?;
    let d = dom.dim;
    let r = x.dist(y);
    if r == 0.0 {
        return Ok(f64::INFINITY);
    }
    let xr = *x - dom.center;
    let yr = *y - dom.center;
    let big = dom.radius;
    let nx = xr.norm();
    let image = if nx < 1e-300 {
        fundamental(big, d)
    } else {
        let star = xr * (big * big / (nx * nx));
        fundamental(nx / big * yr.dist(&star), d)
    };
    Ok(2.0 * (fundamental(r, d) - image).max(0.0))
}

/// Unnormalized kernel `(R² - |y-c|²)/|y-z|^d`.
fn martin_numerator(dom: &DomainModel, y: &Point, z: &Point) -> f64 {
    let yr = *y - dom.center;
    (dom.radius * dom.radius - yr.norm2()) / y.dist(z).powi(dom.dim as i32)
}

/// Martin kernel `K_x(y, z)`, normalized so `K_x(x, z) = 1`. Returns `+∞` at `y = z`.
pub fn martin_kernel(dom: &DomainModel, x: &Point, y: &Point, z: &Point) -> Result<f64> {
    dom.check_interior(x, Level::Outer)?;
    dom.check_point(y)?;
    if y.dist(z) == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(martin_numerator(dom, y, z) / martin_numerator(dom, x, z))
}

/// `∇_y log K_x(y, z)`.
pub fn martin_log_gradient(dom: &DomainModel, y: &Point, z: &Point) -> Point {
    let yr = *y - dom.center;
    let a = dom.radius * dom.radius - yr.norm2();
    let dz = *y - *z;
    yr * (-2.0 / a) + dz * (-(dom.dim as f64) / dz.norm2())
}

/// Poisson kernel density of the exit position at `ζ ∈ ∂D` with respect to surface measure.
pub fn poisson_kernel(dom: &DomainModel, x: &Point, zeta: &Point) -> f64 {
    let xr = *x - dom.center;
    (dom.radius * dom.radius - xr.norm2())
        / (sphere_area(dom.dim) * dom.radius * x.dist(zeta).powi(dom.dim as i32))
}

/// `E_x τ_D = (R² - |x-c|²)/d`.
pub fn expected_exit_time(dom: &DomainModel, x: &Point) -> Result<f64> {
    dom.check_interior(x, Level::Outer)?;
    Ok((dom.radius * dom.radius - (*x - dom.center).norm2()) / dom.dim as f64)
}

/// Harmonic measure from `x` of the cap `Δ(z, ε)`, by adaptive 2D quadrature of the Poisson kernel.
pub fn harmonic_measure_cap(dom: &DomainModel, x: &Point, target: &BoundaryTarget) -> Result<f64> {
    dom.check_interior(x, Level::Outer)?;
    dom.check_point(&target.center)?;
    let d = dom.dim;
    let big = dom.radius;
    if target.eps >= 2.0 * big {
        return Ok(1.0);
    }
    let alpha_max = 2.0 * (target.eps / (2.0 * big)).asin();
    let zhat = (target.center - dom.center) * (1.0 / big);
    let xr = *x - dom.center;
    let a = xr.dot(&zhat);
    let b = (xr - zhat * a).norm();
    let x2 = xr.norm2();
    let tol = 1e-10;
    if b < 1e-14 * big {
        // Axially symmetric: a single polar integral.
        let s = sphere_area(d - 1);
        let v = adaptive(
            |al: f64| {
                let dist2 = x2 + big * big - 2.0 * big * a * al.cos();
                s * al.sin().powi(d as i32 - 2) * big.powi(d as i32 - 1) * (big * big - x2)
                    / (sphere_area(d) * big * dist2.powf(d as f64 / 2.0))
            },
            0.0,
            alpha_max,
            tol,
        );
        return Ok(v.clamp(0.0, 1.0));
    }
    let s_inner = sphere_area(d - 2);
    let v = adaptive(
        |al: f64| {
            let (sa, ca) = al.sin_cos();
            let inner = adaptive(
                |be: f64| {
                    let dist2 = x2 + big * big - 2.0 * big * (a * ca + b * sa * be.cos());
                    be.sin().powi(d as i32 - 3) / dist2.powf(d as f64 / 2.0)
                },
                0.0,
                PI,
                tol,
            );
            s_inner * inner * sa.powi(d as i32 - 2) * big.powi(d as i32 - 1) * (big * big - x2)
                / (sphere_area(d) * big)
        },
        0.0,
        alpha_max,
        tol,
    );
    Ok(v.clamp(0.0, 1.0))
}

/// Surface fraction of a cap of chordal radius `ε` on a sphere of radius `R`.
pub fn cap_surface_fraction(d: usize, radius: f64, eps: f64) -> f64 {
    if eps >= 2.0 * radius {
        return 1.0;
    }
    let alpha_max = 2.0 * (eps / (2.0 * radius)).asin();
    let num = adaptive(|a: f64| a.sin().powi(d as i32 - 2), 0.0, alpha_max, 1e-13);
    let den = PI.sqrt() * gamma_half(d as u32 - 1) / gamma_half(d as u32);
    num / den
}

/// Relative shell thickness at which walk-on-spheres stops and projects.
pub const WOS_SHELL: f64 = 1e-10;

/// Samples the exit position of Brownian motion from `x` by walk on spheres.
///
/// The walk stops inside a shell of relative width `1e-10` and projects
/// radially, so the law equals the Poisson kernel up to that displacement.
pub fn sample_exit<R: Rng + ?Sized>(ball: &Ball, x: &Point, rng: &mut R) -> Point {
    let mut y = *x;
    let shell = WOS_SHELL * ball.radius;
    loop {
        let delta = ball.depth(&y);
        if delta <= shell {
            return ball.project(&y);
        }
        y += Point::uniform_direction(y.dim(), rng) * delta;
    }
}

/// Exit sample on the outer boundary of a domain.
pub fn sample_exit_domain<R: Rng + ?Sized>(dom: &DomainModel, x: &Point, rng: &mut R) -> Result<Point> {
    dom.check_interior(x, Level::Outer)?;
    Ok(sample_exit(&dom.outer(), x, rng))
}
