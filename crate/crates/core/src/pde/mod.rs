//! Fields built from the equation `½Δu = 2u²`: nonlinear solutions `g`,
//! the potential operator `U^{4g}`, radial boundary-value solutions and the
//! recursive families `v^A`.

pub mod radial;
pub mod vfamily;

use crate::diffusion::{Killing, PathConfig, TransformSpec, Walker};
use crate::error::{Error, Result};
use crate::geometry::{DomainKind, DomainModel, Level, Point};
use crate::rng::{par_replicas, tag};
use crate::stats::{mean_se, EstimatorKind, EstimatorResult};
use radial::{blowup_profile, RadialSolution};
use serde::{Deserialize, Serialize};
use std::fmt::Debug;
use std::sync::Arc;

pub use vfamily::{build_vfamily, vfamily_residual, GridSpec, ResidualReport, SingletonKind, VFamily};

/// How a field depends on position; used to reduce the dimension of grids.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FieldSymmetry {
    Constant,
    /// Depends only on `|x - center|`.
    Radial { center: Point },
    /// Depends only on `x · axis`.
    Axial { axis: Point },
}

/// A nonnegative solution `g` of `½Δg = 2g²`, used as a killing rate `4g`.
pub trait NonlinearField: Send + Sync + Debug {
    /// Registry name.
    fn name(&self) -> &'static str;
    /// `g(x)`, or `+∞` where the field is not defined.
    fn value(&self, x: &Point) -> f64;
    fn symmetry(&self) -> FieldSymmetry;
    fn is_zero(&self) -> bool {
        false
    }
}

/// `g ≡ 0`.
#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroField;

impl NonlinearField for ZeroField {
    fn name(&self) -> &'static str {
        "zero"
    }
    fn value(&self, _x: &Point) -> f64 {
        0.0
    }
    fn symmetry(&self) -> FieldSymmetry {
        FieldSymmetry::Constant
    }
    fn is_zero(&self) -> bool {
        true
    }
}

/// `g(x) = (3/2)·x_d^{-2}` on the half-space `{x_d > 0}`.
#[derive(Clone, Copy, Debug)]
pub struct HalfSpaceExact {
    pub dim: usize,
}

pub const HALF_SPACE_COEFFICIENT: f64 = 1.5;

impl HalfSpaceExact {
    pub fn new(dim: usize) -> Self {
        HalfSpaceExact { dim }
    }

    /// `g(x)`, rejecting points with `x_d <= 0`.
    pub fn try_value(&self, x: &Point) -> Result<f64> {
        if x.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: x.dim() });
        }
        let h = x[self.dim - 1];
        if h <= 0.0 {
            return Err(Error::OutsideDomain(format!("half-space field needs x_d > 0, got {h}")));
        }
        Ok(HALF_SPACE_COEFFICIENT / (h * h))
    }
}

impl NonlinearField for HalfSpaceExact {
    fn name(&self) -> &'static str {
        "half-space"
    }
    fn value(&self, x: &Point) -> f64 {
        let h = x[self.dim - 1];
        if h <= 0.0 {
            f64::INFINITY
        } else {
            HALF_SPACE_COEFFICIENT / (h * h)
        }
    }
    fn symmetry(&self) -> FieldSymmetry {
        FieldSymmetry::Axial { axis: Point::axis(self.dim, self.dim - 1, 1.0) }
    }
}

/// The radial solution that blows up on the sphere `|x - center| = radius`.
#[derive(Clone, Debug)]
pub struct RadialBlowup {
    pub center: Point,
    pub radius: f64,
    pub profile: RadialSolution,
}

impl RadialBlowup {
    pub fn new(center: Point, radius: f64) -> Result<Self> {
        let profile = blowup_profile(center.dim(), radius)?;
        Ok(RadialBlowup { center, radius, profile })
    }

    /// `(u, u', u'')` in the radial variable.
    pub fn radial(&self, r: f64) -> [f64; 3] {
        self.profile.eval(r)
    }
}

impl NonlinearField for RadialBlowup {
    fn name(&self) -> &'static str {
        "radial-blowup"
    }
    fn value(&self, x: &Point) -> f64 {
        let r = x.dist(&self.center);
        if r >= self.radius {
            f64::INFINITY
        } else {
            self.profile.value(r)
        }
    }
    fn symmetry(&self) -> FieldSymmetry {
        FieldSymmetry::Radial { center: self.center }
    }
}

/// `half_space_exact` as a constructor.
pub fn half_space_exact(dim: usize) -> HalfSpaceExact {
    HalfSpaceExact::new(dim)
}

/// The radial blow-up solution on a ball of radius `radius` centered at the origin.
pub fn radial_blowup(d: usize, radius: f64) -> Result<RadialBlowup> {
    RadialBlowup::new(Point::zeros(d), radius)
}

type FieldBuilder = fn(&DomainModel) -> Result<Arc<dyn NonlinearField>>;

fn build_zero(_dom: &DomainModel) -> Result<Arc<dyn NonlinearField>> {
    Ok(Arc::new(ZeroField))
}

fn build_half_space(dom: &DomainModel) -> Result<Arc<dyn NonlinearField>> {
    if dom.kind != DomainKind::HalfSpaceCap {
        return Err(Error::InvalidParameter("the half-space field needs a half-space-cap domain".into()));
    }
    Ok(Arc::new(HalfSpaceExact::new(dom.dim)))
}

fn build_radial(dom: &DomainModel) -> Result<Arc<dyn NonlinearField>> {
    Ok(Arc::new(RadialBlowup::new(dom.center, dom.radius)?))
}

/// Registered field constructors, by config name.
pub const FIELD_REGISTRY: &[(&str, FieldBuilder)] =
    &[("zero", build_zero), ("half-space", build_half_space), ("radial-blowup", build_radial)];

/// Builds a registered field for a domain.
pub fn build_field(name: &str, dom: &DomainModel) -> Result<Arc<dyn NonlinearField>> {
    FIELD_REGISTRY
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, b)| b(dom))
        .unwrap_or_else(|| {
            let known: Vec<&str> = FIELD_REGISTRY.iter().map(|(n, _)| *n).collect();
            Err(Error::InvalidParameter(format!("unknown field '{name}', expected one of {known:?}")))
        })
}

/// Serializable choice of field.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FieldChoice {
    #[default]
    Zero,
    HalfSpace,
    RadialBlowup,
}

impl FieldChoice {
    pub fn name(self) -> &'static str {
        match self {
            FieldChoice::Zero => "zero",
            FieldChoice::HalfSpace => "half-space",
            FieldChoice::RadialBlowup => "radial-blowup",
        }
    }

    pub fn build(self, dom: &DomainModel) -> Result<Arc<dyn NonlinearField>> {
        build_field(self.name(), dom)
    }
}

/// Monte Carlo estimate of `U^{4g}f(x) = E_x ∫_0^τ exp(-∫_0^t 4g(B_s)ds) f(B_t) dt`.
///
/// Paths are not killed; they carry the survival weight, and the time
/// integral uses the trapezoidal rule on the step grid.
#[allow(clippy::too_many_arguments)]
pub fn potential_apply<F>(
    dom: &DomainModel,
    level: Level,
    g: &dyn NonlinearField,
    f: F,
    x: &Point,
    reps: usize,
    cfg: &PathConfig,
    seed: u64,
) -> Result<EstimatorResult>
where
    F: Fn(&Point) -> f64 + Sync,
{
    dom.check_interior(x, level)?;
    cfg.validate(dom.dim)?;
    if reps < 2 {
        return Err(Error::InvalidParameter("potential_apply needs at least 2 replicas".into()));
    }
    if !f(x).is_finite() {
        return Err(Error::InvalidParameter("integrand is not finite at the evaluation point".into()));
    }
    let ball = dom.ball_at(level)?;
    let mut walker = Walker::new(ball, TransformSpec::Plain, Killing::None, *cfg);
    walker.cap = cfg.dt;
    let samples = par_replicas(reps, seed, tag("potential_apply"), |_, rng| -> Result<f64> {
        let mut acc = 0.0;
        let mut lw = 0.0;
        let mut bad = false;
        walker.run(x, 0.0, rng, |s| {
            let h = s.t1 - s.t0;
            let (g0, g1) = (g.value(&s.x0), if g.is_zero() { 0.0 } else { g.value(&s.x1) });
            let (f0, f1) = (f(&s.x0), f(&s.x1));
            if !(f0.is_finite() && f1.is_finite()) {
                bad = true;
            }
            let lw1 = lw - 2.0 * h * (g0 + g1);
            acc += 0.5 * h * (f64::exp(lw) * f0 + f64::exp(lw1) * f1);
            lw = lw1;
        })?;
        if bad {
            return Err(Error::InvalidParameter("integrand unbounded along a path".into()));
        }
        Ok(acc)
    });
    let vals: Vec<f64> = samples.into_iter().collect::<Result<_>>()?;
    let (m, se) = mean_se(&vals);
    Ok(EstimatorResult::new(m, se, reps, EstimatorKind::Direct))
}
