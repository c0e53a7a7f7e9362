//! Exit measures of super-Brownian motion on balls.
//!
//! The crate covers the exact partition calculus behind the moment and
//! martingale formulas, the elliptic fields they are built from, a branching
//! particle approximation of the exit measure, Monte Carlo estimators of
//! excursion-measure functionals, and the multi-type backbone that describes
//! the exit measure conditioned to charge several boundary points.
//!
//! Normalization throughout: the branching mechanism is `psi(u) = 2u^2`, so a
//! field `u` solving the nonlinear equation satisfies `½Δu = 2u²`, and the
//! excursion-measure Palm formula carries the factor 4.

pub mod backbone;
pub mod conditioning;
pub mod diffusion;
pub mod error;
pub mod geometry;
pub mod martingales;
pub mod partitions;
pub mod pde;
pub mod quadrature;
pub mod rng;
pub mod stats;
pub mod superprocess;

pub use error::{Error, Result};
pub use geometry::{DomainModel, Level, Point};
