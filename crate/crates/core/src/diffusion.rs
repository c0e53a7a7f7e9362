//! Path samplers: plain Brownian motion, killed Brownian motion, and the two
//! Doob-transform regimes (harmonic transforms that exit at the boundary and
//! potential transforms that die in the interior).
//!
//! All samplers share one stepping engine. Step sizes shrink geometrically
//! near the boundary, `h = clamp((δ/γ)², dt_min, cap)`, and every step carries
//! an exact half-space bridge test, so exits between grid times are detected.

use crate::error::{Error, Result};
use crate::geometry::{Ball, DomainModel, Level, Point};
use crate::pde::NonlinearField;
use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

/// Safety factor relating step length to the distance from the boundary.
pub const GAMMA: f64 = 3.0;

/// Discretization parameters shared by all samplers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathConfig {
    /// Largest time step for paths with drift or killing.
    pub dt: f64,
    /// Smallest time step, used in the boundary layer.
    #[serde(default = "default_dt_min")]
    pub dt_min: f64,
    /// Width of the boundary layer with refined steps and bridge exit tests.
    pub bdry_tol: f64,
    /// Step budget per path.
    pub max_steps: usize,
}

fn default_dt_min() -> f64 {
    1e-8
}

impl Default for PathConfig {
    fn default() -> Self {
        PathConfig { dt: 1e-4, dt_min: default_dt_min(), bdry_tol: 0.08, max_steps: 50_000_000 }
    }
}

impl PathConfig {
    /// Checks `dt > 0`, `dt_min <= dt` and `bdry_tol >= 3·sqrt(d·dt)`.
    pub fn validate(&self, d: usize) -> Result<()> {
        if !(self.dt > 0.0 && self.dt_min > 0.0 && self.dt_min <= self.dt) {
            return Err(Error::InvalidParameter(format!(
                "need 0 < dt_min <= dt, got dt = {}, dt_min = {}",
                self.dt, self.dt_min
            )));
        }
        let need = 3.0 * (d as f64 * self.dt).sqrt();
        if self.bdry_tol < need {
            return Err(Error::InvalidParameter(format!(
                "bdry_tol = {} below 3·sqrt(d·dt) = {need:.4}",
                self.bdry_tol
            )));
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidParameter("max_steps must be positive".into()));
        }
        Ok(())
    }

    /// A config with the given `dt` and the smallest valid boundary layer for dimension `d`.
    pub fn with_dt(dt: f64, d: usize) -> Self {
        PathConfig { dt, bdry_tol: 3.0 * (d as f64 * dt).sqrt(), ..Default::default() }
    }
}

/// Step length rule.
#[inline]
pub fn step_size(depth: f64, cap: f64, floor: f64) -> f64 {
    let h = depth / GAMMA;
    (h * h).max(floor).min(cap)
}

/// Result of one Gaussian step inside a ball.
#[derive(Clone, Copy, Debug)]
pub enum StepOutcome {
    Inside(Point, f64),
    Exited(Point),
}

/// Advances `x` (at depth `depth_x` inside `ball`) by a Gaussian step of length `h`
/// with constant drift, testing for an exit during the step.
#[inline]
pub fn gaussian_step<R: Rng + ?Sized>(
    ball: &Ball,
    x: &Point,
    depth_x: f64,
    drift: Option<&Point>,
    h: f64,
    rng: &mut R,
) -> StepOutcome {
    let d = x.dim();
    let sh = h.sqrt();
    let mut y = *x;
    for i in 0..d {
        let z: f64 = rng.sample(StandardNormal);
        y[i] += sh * z;
    }
    if let Some(b) = drift {
        y += *b * h;
    }
    let depth_y = ball.depth(&y);
    if depth_y <= 0.0 {
        return StepOutcome::Exited(ball.segment_exit(x, &y));
    }
    let a = 2.0 * depth_x * depth_y / h;
    if a < 40.0 && rng.random::<f64>() < (-a).exp() {
        return StepOutcome::Exited(ball.project(&((*x + y) * 0.5)));
    }
    StepOutcome::Inside(y, depth_y)
}

/// A positive harmonic (or `L_{4g}`-harmonic) function used as a Doob transform.
pub trait HarmonicField: Send + Sync {
    fn value(&self, y: &Point) -> f64;
    fn log_gradient(&self, y: &Point) -> Point;
}

/// A potential `v = U^{4g} f` used as a Doob transform with interior death.
pub trait PotentialField: Send + Sync {
    fn value(&self, y: &Point) -> f64;
    fn log_gradient(&self, y: &Point) -> Point;
    /// `f(y) / v(y)`.
    fn death_rate(&self, y: &Point) -> f64;
}

/// `h ≡ 1`.
#[derive(Clone, Copy, Debug, Default)]
pub struct UnitField;

impl HarmonicField for UnitField {
    fn value(&self, _y: &Point) -> f64 {
        1.0
    }
    fn log_gradient(&self, y: &Point) -> Point {
        Point::zeros(y.dim())
    }
}

/// Martin kernel `K_{x0}(·, z)` of a ball domain.
#[derive(Clone, Debug)]
pub struct MartinField {
    pub dom: DomainModel,
    pub base: Point,
    pub pole: Point,
    norm: f64,
}

impl MartinField {
    pub fn new(dom: &DomainModel, base: &Point, pole: &Point) -> Result<Self> {
        dom.check_interior(base, Level::Outer)?;
        dom.check_point(pole)?;
        let br = *base - dom.center;
        let norm = (dom.radius * dom.radius - br.norm2()) / base.dist(pole).powi(dom.dim as i32);
        Ok(MartinField { dom: dom.clone(), base: *base, pole: *pole, norm })
    }

    /// Gradient of the kernel itself.
    pub fn gradient(&self, y: &Point) -> Point {
        self.log_gradient(y) * self.value(y)
    }
}

impl HarmonicField for MartinField {
    fn value(&self, y: &Point) -> f64 {
        let yr = *y - self.dom.center;
        let r = y.dist(&self.pole);
        if r == 0.0 {
            return f64::INFINITY;
        }
        (self.dom.radius * self.dom.radius - yr.norm2()) / r.powi(self.dom.dim as i32) / self.norm
    }
    fn log_gradient(&self, y: &Point) -> Point {
        crate::geometry::martin_log_gradient(&self.dom, y, &self.pole)
    }
}

/// How the lifetime of a path is limited besides exiting.
#[derive(Clone, Copy)]
pub enum Killing<'a> {
    None,
    /// Accumulate `∫4g` as a log-weight without killing.
    Weight(&'a dyn NonlinearField),
    /// Kill at rate `4g`.
    Thin(&'a dyn NonlinearField),
}

/// Which transform drives the path.
#[derive(Clone, Copy)]
pub enum TransformSpec<'a> {
    Plain,
    HarmonicH(&'a dyn HarmonicField),
    PotentialH(&'a dyn PotentialField),
}

/// How a path ended.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Terminal {
    ExitAt { point: Point, time: f64 },
    DiedAt { point: Point, time: f64 },
    /// Reached the optional time horizon alive.
    Horizon { point: Point, time: f64 },
}

impl Terminal {
    pub fn point(&self) -> Point {
        match self {
            Terminal::ExitAt { point, .. } | Terminal::DiedAt { point, .. } | Terminal::Horizon { point, .. } => {
                *point
            }
        }
    }
    pub fn time(&self) -> f64 {
        match self {
            Terminal::ExitAt { time, .. } | Terminal::DiedAt { time, .. } | Terminal::Horizon { time, .. } => {
                *time
            }
        }
    }
}

/// One completed step, reported to observers.
#[derive(Clone, Copy, Debug)]
pub struct StepInfo {
    pub t0: f64,
    pub x0: Point,
    pub t1: f64,
    pub x1: Point,
}

/// A sampled path with optional recorded trajectory.
#[derive(Clone, Debug, Serialize)]
pub struct SampledPath {
    pub times: Vec<f64>,
    pub positions: Vec<Point>,
    pub terminal: Terminal,
    /// `-∫4g` along the path for weighted killing, else 0.
    pub log_weight: f64,
    pub steps: usize,
}

impl SampledPath {
    pub fn duration(&self) -> f64 {
        self.terminal.time() - self.times.first().copied().unwrap_or(0.0)
    }
}

/// The common stepping engine.
pub struct Walker<'a> {
    pub ball: Ball,
    pub transform: TransformSpec<'a>,
    pub killing: Killing<'a>,
    pub cfg: PathConfig,
    /// Step cap; `f64::INFINITY` lets plain paths take geometric steps.
    pub cap: f64,
    pub horizon: f64,
}

const MAX_RETRIES: usize = 30;

impl<'a> Walker<'a> {
    pub fn new(ball: Ball, transform: TransformSpec<'a>, killing: Killing<'a>, cfg: PathConfig) -> Self {
        let pure = matches!(transform, TransformSpec::Plain) && matches!(killing, Killing::None);
        Walker { ball, transform, killing, cfg, cap: if pure { f64::INFINITY } else { cfg.dt }, horizon: f64::INFINITY }
    }

    pub fn with_horizon(mut self, horizon: f64) -> Self {
        self.horizon = horizon;
        self
    }

    fn drift(&self, y: &Point) -> Option<Point> {
        match self.transform {
            TransformSpec::Plain => None,
            TransformSpec::HarmonicH(h) => Some(h.log_gradient(y)),
            TransformSpec::PotentialH(v) => Some(v.log_gradient(y)),
        }
    }

    fn field_ok(&self, y: &Point) -> bool {
        match self.transform {
            TransformSpec::Plain => true,
            TransformSpec::HarmonicH(h) => {
                let v = h.value(y);
                v.is_finite() && v > 0.0
            }
            TransformSpec::PotentialH(v) => {
                let a = v.value(y);
                a.is_finite() && a > 0.0
            }
        }
    }

    fn hazard(&self, y: &Point) -> f64 {
        let mut r = 0.0;
        if let Killing::Thin(g) | Killing::Weight(g) = self.killing {
            r += 4.0 * g.value(y);
        }
        r
    }

    fn death_rate(&self, y: &Point) -> f64 {
        match self.transform {
            TransformSpec::PotentialH(v) => v.death_rate(y),
            _ => 0.0,
        }
    }

    /// Runs from `x` at time `t0` until exit, death or horizon.
    pub fn run<R: Rng + ?Sized, F: FnMut(&StepInfo)>(
        &self,
        x: &Point,
        t0: f64,
        rng: &mut R,
        mut on_step: F,
    ) -> Result<(Terminal, f64, usize)> {
        let mut x = *x;
        let mut t = t0;
        let mut depth = self.ball.depth(&x);
        if depth <= 0.0 {
            return Err(Error::OutsideDomain(format!("path start {:?} outside ball", x.as_slice())));
        }
        if !self.field_ok(&x) {
            return Err(Error::Numerical(format!("transform not positive at start {:?}", x.as_slice())));
        }
        let mut log_w = 0.0;
        let mut haz_x = self.hazard(&x);
        let mut rate_x = self.death_rate(&x);
        let thin = matches!(self.killing, Killing::Thin(_));
        let weight = matches!(self.killing, Killing::Weight(_));
        for step in 0..self.cfg.max_steps {
            let drift = self.drift(&x);
            let mut h = step_size(depth, self.cap, self.cfg.dt_min);
            if let Some(b) = &drift {
                let bn = b.norm();
                if bn > 0.0 {
                    h = h.min((depth / (GAMMA * bn)).max(self.cfg.dt_min));
                }
            }
            let mut last = false;
            if t + h >= self.horizon {
                h = self.horizon - t;
                last = true;
            }
            let mut tries = 0;
            let outcome = loop {
                let o = gaussian_step(&self.ball, &x, depth, drift.as_ref(), h, rng);
                match o {
                    StepOutcome::Inside(y, _) if !self.field_ok(&y) => {
                        tries += 1;
                        if tries > MAX_RETRIES {
                            return Err(Error::Numerical(format!(
                                "transform evaluation failed near {:?}",
                                y.as_slice()
                            )));
                        }
                        h *= 0.25;
                        last = false;
                    }
                    _ => break o,
                }
            };
            match outcome {
                StepOutcome::Exited(p) => {
                    let t1 = t + h;
                    on_step(&StepInfo { t0: t, x0: x, t1, x1: p });
                    if weight {
                        log_w -= h * haz_x;
                    }
                    return Ok((Terminal::ExitAt { point: p, time: t1 }, log_w, step + 1));
                }
                StepOutcome::Inside(y, dy) => {
                    let t1 = t + h;
                    let haz_y = self.hazard(&y);
                    let rate_y = self.death_rate(&y);
                    on_step(&StepInfo { t0: t, x0: x, t1, x1: y });
                    if weight {
                        log_w -= 0.5 * h * (haz_x + haz_y);
                    }
                    let lambda = 0.5 * h * (if thin { haz_x + haz_y } else { 0.0 } + rate_x + rate_y);
                    if lambda > 0.0 && rng.random::<f64>() < -(-lambda).exp_m1() {
                        return Ok((Terminal::DiedAt { point: y, time: t1 }, log_w, step + 1));
                    }
                    x = y;
                    t = t1;
                    depth = dy;
                    haz_x = haz_y;
                    rate_x = rate_y;
                    if last {
                        return Ok((Terminal::Horizon { point: x, time: t }, log_w, step + 1));
                    }
                }
            }
        }
        Err(Error::StepBudget { max_steps: self.cfg.max_steps })
    }

    /// Runs and records the trajectory.
    pub fn sample<R: Rng + ?Sized>(&self, x: &Point, rng: &mut R) -> Result<SampledPath> {
        let mut times = vec![0.0];
        let mut positions = vec![*x];
        let (terminal, log_weight, steps) = self.run(x, 0.0, rng, |s| {
            times.push(s.t1);
            positions.push(s.x1);
        })?;
        Ok(SampledPath { times, positions, terminal, log_weight, steps })
    }
}

/// Plain Brownian motion from `x` until it leaves the given level.
pub fn sample_plain<R: Rng + ?Sized>(
    dom: &DomainModel,
    level: Level,
    x: &Point,
    cfg: &PathConfig,
    rng: &mut R,
) -> Result<SampledPath> {
    dom.check_interior(x, level)?;
    Walker::new(dom.ball_at(level)?, TransformSpec::Plain, Killing::None, *cfg).sample(x, rng)
}

/// Plain Brownian motion carrying the killing weight `exp(-∫4g)`.
pub fn sample_killed<R: Rng + ?Sized>(
    dom: &DomainModel,
    level: Level,
    x: &Point,
    g: &dyn NonlinearField,
    cfg: &PathConfig,
    rng: &mut R,
) -> Result<SampledPath> {
    dom.check_interior(x, level)?;
    Walker::new(dom.ball_at(level)?, TransformSpec::Plain, Killing::Weight(g), *cfg).sample(x, rng)
}

/// Doob transform by a harmonic field; the path exits `∂D`.
pub fn sample_h_exit<R: Rng + ?Sized>(
    dom: &DomainModel,
    x: &Point,
    h: &dyn HarmonicField,
    cfg: &PathConfig,
    rng: &mut R,
) -> Result<SampledPath> {
    dom.check_interior(x, Level::Outer)?;
    Walker::new(dom.outer(), TransformSpec::HarmonicH(h), Killing::None, *cfg).sample(x, rng)
}

/// Doob transform by a potential; the path dies in the interior at rate `f/v`.
///
/// A path that reaches `∂D` first is a discretization artifact and is
/// returned as `Ok(None)` so callers can count rejections.
pub fn sample_v_death<R: Rng + ?Sized>(
    dom: &DomainModel,
    x: &Point,
    v: &dyn PotentialField,
    cfg: &PathConfig,
    rng: &mut R,
) -> Result<Option<SampledPath>> {
    dom.check_interior(x, Level::Outer)?;
    let p = Walker::new(dom.outer(), TransformSpec::PotentialH(v), Killing::None, *cfg).sample(x, rng)?;
    Ok(match p.terminal {
        Terminal::DiedAt { .. } => Some(p),
        _ => None,
    })
}

/// `exp(-∫4g)` along a recorded path, by the trapezoidal rule.
pub fn killed_weight(path: &SampledPath, g: &dyn NonlinearField) -> f64 {
    let mut acc = 0.0;
    let n = path.positions.len();
    for i in 1..n {
        let h = path.times[i] - path.times[i - 1];
        acc += 0.5 * h * 4.0 * (g.value(&path.positions[i - 1]) + g.value(&path.positions[i]));
    }
    (-acc).exp()
}

/// Draws an exponential variable with the given rate.
#[inline]
pub fn exp_time<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> f64 {
    let e: f64 = rng.sample(Exp1);
    e / rate
}
