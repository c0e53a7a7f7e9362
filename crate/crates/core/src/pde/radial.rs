//! Radial solutions of `½Δu = 2u²` and of the linear equation `½Δφ = 4gφ`.
//!
//! Every positive radial solution regular at the origin is a rescaling of the
//! master profile `U` with `U(0) = 1`: `u(r) = a·U(√a·r)`. The master profile
//! is integrated once per dimension up to its blow-up radius and stored as a
//! quintic Hermite table of `(U, U', U'')`.

use crate::error::{Error, Result};
use std::sync::{Arc, Mutex, OnceLock};

/// Piecewise quintic Hermite interpolant of `(f, f', f'')` on increasing nodes.
#[derive(Clone, Debug)]
pub struct HermiteTable {
    pub r: Vec<f64>,
    pub y: Vec<[f64; 3]>,
}

impl HermiteTable {
    pub fn r_max(&self) -> f64 {
        *self.r.last().unwrap()
    }

    /// `(f, f', f'')` at `r` in `[r_0, r_last]`.
    pub fn eval(&self, r: f64) -> [f64; 3] {
        let n = self.r.len();
        let i = match self.r.partition_point(|&t| t <= r) {
            0 => 0,
            k if k >= n => n - 2,
            k => k - 1,
        };
        let (r0, r1) = (self.r[i], self.r[i + 1]);
        let h = r1 - r0;
        let t = (r - r0) / h;
        let [p0, m0, a0] = self.y[i];
        let [p1, m1, a1] = self.y[i + 1];
        let (t2, t3) = (t * t, t * t * t);
        let (t4, t5) = (t3 * t, t3 * t2);
        let b = [
            1.0 - 10.0 * t3 + 15.0 * t4 - 6.0 * t5,
            10.0 * t3 - 15.0 * t4 + 6.0 * t5,
            t - 6.0 * t3 + 8.0 * t4 - 3.0 * t5,
            -4.0 * t3 + 7.0 * t4 - 3.0 * t5,
            0.5 * (t2 - 3.0 * t3 + 3.0 * t4 - t5),
            0.5 * (t3 - 2.0 * t4 + t5),
        ];
        let db = [
            -30.0 * t2 + 60.0 * t3 - 30.0 * t4,
            30.0 * t2 - 60.0 * t3 + 30.0 * t4,
            1.0 - 18.0 * t2 + 32.0 * t3 - 15.0 * t4,
            -12.0 * t2 + 28.0 * t3 - 15.0 * t4,
            0.5 * (2.0 * t - 9.0 * t2 + 12.0 * t3 - 5.0 * t4),
            0.5 * (3.0 * t2 - 8.0 * t3 + 5.0 * t4),
        ];
        let ddb = [
            -60.0 * t + 180.0 * t2 - 120.0 * t3,
            60.0 * t - 180.0 * t2 + 120.0 * t3,
            -36.0 * t + 96.0 * t2 - 60.0 * t3,
            -24.0 * t + 84.0 * t2 - 60.0 * t3,
            0.5 * (2.0 - 18.0 * t + 36.0 * t2 - 20.0 * t3),
            0.5 * (6.0 * t - 24.0 * t2 + 20.0 * t3),
        ];
        let c = [p0, p1, h * m0, h * m1, h * h * a0, h * h * a1];
        let mut out = [0.0; 3];
        for k in 0..6 {
            out[0] += c[k] * b[k];
            out[1] += c[k] * db[k];
            out[2] += c[k] * ddb[k];
        }
        out[1] /= h;
        out[2] /= h * h;
        out
    }
}

/// Right-hand side of `f'' = F(r, f) - (d-1)f'/r`, with the regular limit at `r = 0`.
fn radial_rhs(d: usize, r: f64, df: f64, source: f64) -> f64 {
    if r < 1e-300 {
        source / d as f64
    } else {
        source - (d as f64 - 1.0) * df / r
    }
}

/// One RK4 step for `(f, f')`.
fn rk4<F: Fn(f64, f64) -> f64>(d: usize, r: f64, y: [f64; 2], h: f64, src: &F) -> [f64; 2] {
    let acc = |r: f64, y: [f64; 2]| radial_rhs(d, r, y[1], src(r, y[0]));
    let k1 = [y[1], acc(r, y)];
    let y2 = [y[0] + 0.5 * h * k1[0], y[1] + 0.5 * h * k1[1]];
    let k2 = [y2[1], acc(r + 0.5 * h, y2)];
    let y3 = [y[0] + 0.5 * h * k2[0], y[1] + 0.5 * h * k2[1]];
    let k3 = [y3[1], acc(r + 0.5 * h, y3)];
    let y4 = [y[0] + h * k3[0], y[1] + h * k3[1]];
    let k4 = [y4[1], acc(r + h, y4)];
    [
        y[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        y[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
    ]
}

const H_MAX: f64 = 2e-4;
const REL_STEP: f64 = 3e-3;
const U_STOP: f64 = 1e14;

/// Master profile `U(0) = 1` of `U'' + (d-1)U'/r = 4U²` and its blow-up radius.
#[derive(Debug)]
pub struct MasterProfile {
    pub dim: usize,
    pub table: HermiteTable,
    pub r_star: f64,
    tail_a: f64,
}

impl MasterProfile {
    fn compute(d: usize) -> Result<Self> {
        let src = |_r: f64, u: f64| 4.0 * u * u;
        let mut r = 0.0;
        let mut y = [1.0, 0.0];
        let mut rs = vec![0.0];
        let mut ys = vec![[1.0, 0.0, 4.0 / d as f64]];
        while y[0] < U_STOP {
            let dist = (1.5 / y[0]).sqrt();
            let h = H_MAX.min(REL_STEP * dist);
            y = rk4(d, r, y, h, &src);
            r += h;
            if !y[0].is_finite() || rs.len() > 10_000_000 {
                return Err(Error::Numerical(format!("radial integration failed at r = {r}")));
            }
            rs.push(r);
            ys.push([y[0], y[1], radial_rhs(d, r, y[1], src(r, y[0]))]);
        }
        let a0 = (d as f64 - 1.0) / 5.0;
        let delta = (1.5 / y[0]).sqrt();
        let r_star = r + delta * (1.0 + a0 * delta / (2.0 * r));
        Ok(MasterProfile { dim: d, table: HermiteTable { r: rs, y: ys }, r_star, tail_a: a0 / r_star })
    }

    /// `(U, U', U'')` at `r < r_star`; beyond the table the two-term blow-up asymptotics are used.
    pub fn eval(&self, r: f64) -> [f64; 3] {
        if r <= self.table.r_max() {
            return self.table.eval(r);
        }
        if r >= self.r_star {
            return [f64::INFINITY; 3];
        }
        let dl = self.r_star - self.table.r_max();
        let last = self.table.y[self.table.y.len() - 1][0];
        let shape = |dd: f64| 1.5 / (dd * dd) * (1.0 + self.tail_a * dd);
        let c = last / shape(dl);
        let dd = self.r_star - r;
        let a = self.tail_a;
        [
            c * shape(dd),
            c * 1.5 * (2.0 / dd.powi(3) + a / (dd * dd)),
            c * 1.5 * (6.0 / dd.powi(4) + 2.0 * a / dd.powi(3)),
        ]
    }

    /// The master profile for dimension `d`, computed once per process.
    pub fn get(d: usize) -> Result<Arc<MasterProfile>> {
        static CACHE: OnceLock<Mutex<Vec<Option<Arc<MasterProfile>>>>> = OnceLock::new();
        if !(3..=crate::geometry::MAX_DIM).contains(&d) {
            return Err(Error::InvalidParameter(format!("dimension {d} not in 3..=6")));
        }
        let cache = CACHE.get_or_init(|| Mutex::new(vec![None; crate::geometry::MAX_DIM + 1]));
        let mut guard = cache.lock().map_err(|_| Error::Numerical("profile cache poisoned".into()))?;
        if let Some(p) = &guard[d] {
            return Ok(p.clone());
        }
        let p = Arc::new(MasterProfile::compute(d)?);
        guard[d] = Some(p.clone());
        Ok(p)
    }
}

/// A rescaled profile `u(r) = a·U(√a·r)`.
#[derive(Clone, Debug)]
pub struct RadialSolution {
    pub master: Arc<MasterProfile>,
    pub scale: f64,
}

impl RadialSolution {
    /// `(u, u', u'')` at radius `r`.
    pub fn eval(&self, r: f64) -> [f64; 3] {
        let s = self.scale.sqrt();
        let [u, du, ddu] = self.master.eval(s * r);
        [self.scale * u, self.scale * s * du, self.scale * self.scale * ddu]
    }

    pub fn value(&self, r: f64) -> f64 {
        self.eval(r)[0]
    }

    /// Radius at which the solution blows up.
    pub fn blowup_radius(&self) -> f64 {
        self.master.r_star / self.scale.sqrt()
    }

    /// `|½Δu - 2u²| / (1 + u²)` at radius `r`.
    pub fn residual(&self, r: f64) -> f64 {
        let d = self.master.dim as f64;
        let [u, du, ddu] = self.eval(r);
        let lap = if r < 1e-12 { d * ddu } else { ddu + (d - 1.0) * du / r };
        (0.5 * lap - 2.0 * u * u).abs() / (1.0 + u * u)
    }
}

/// Radial solution in a ball of radius `radius` that blows up on the sphere.
pub fn blowup_profile(d: usize, radius: f64) -> Result<RadialSolution> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::InvalidParameter(format!("radius {radius} must be positive")));
    }
    let master = MasterProfile::get(d)?;
    let scale = (master.r_star / radius).powi(2);
    Ok(RadialSolution { master, scale })
}

/// Radial solution with boundary value `λ` on the sphere of radius `radius`.
///
/// The scale `a` is found by bisection on `a·U(√a·radius) = λ`, which is
/// increasing in `a`.
pub fn boundary_value_profile(d: usize, radius: f64, lambda: f64) -> Result<RadialSolution> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter(format!("boundary value {lambda} must be positive")));
    }
    let master = MasterProfile::get(d)?;
    let at_boundary = |a: f64| a * master.eval(a.sqrt() * radius)[0];
    let a_max = (master.r_star / radius).powi(2) * (1.0 - 1e-15);
    let (mut lo, mut hi) = (0.0, lambda.min(a_max));
    if at_boundary(hi) < lambda {
        hi = a_max;
        if at_boundary(hi) < lambda {
            return Err(Error::Numerical(format!(
                "could not bracket the boundary value {lambda} on radius {radius}"
            )));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if at_boundary(mid) < lambda {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    Ok(RadialSolution { master, scale: 0.5 * (lo + hi) })
}

/// Radial solution `φ(0) = 1` of `½Δφ = 4g(r)φ` on `[0, r_max]`.
pub fn killed_harmonic_profile<G: Fn(f64) -> f64>(d: usize, r_max: f64, g: G) -> Result<HermiteTable> {
    let src = |r: f64, f: f64| 8.0 * g(r) * f;
    let mut r = 0.0;
    let mut y = [1.0, 0.0];
    let mut rs = vec![0.0];
    let mut ys = vec![[1.0, 0.0, radial_rhs(d, 0.0, 0.0, src(0.0, 1.0))]];
    while r < r_max {
        let gr = g(r);
        let scale = if gr > 0.0 { (1.0 / gr).sqrt() } else { f64::INFINITY };
        let h = H_MAX.min(REL_STEP * scale).min(r_max - r);
        y = rk4(d, r, y, h, &src);
        r = if r_max - r - h < 1e-15 { r_max } else { r + h };
        if !y[0].is_finite() {
            return Err(Error::Numerical(format!("killed harmonic profile overflowed at r = {r}")));
        }
        rs.push(r);
        ys.push([y[0], y[1], radial_rhs(d, r, y[1], src(r, y[0]))]);
    }
    Ok(HermiteTable { r: rs, y: ys })
}
