//! The experiment registry.

mod asymptotics;
mod backbone;
mod calibrate;
mod crossval;
mod forest;
mod identities;
mod loglaplace;
mod martingale;

use crate::config::ExperimentConfig;
use crate::report::Report;
use anyhow::{bail, Result};
use exitmeasure::pde::vfamily::{build_vfamily, CacheOptions, GridSpec, SingletonKind, VFamily};
use exitmeasure::pde::build_field;
use exitmeasure::{DomainModel, Point};

pub trait Experiment: Send + Sync {
    /// Subcommand name.
    fn name(&self) -> &'static str;
    fn about(&self) -> &'static str;
    /// The configuration used when no file or flag overrides a field.
    fn defaults(&self) -> ExperimentConfig;
    fn run(&self, cfg: &ExperimentConfig) -> Result<Report>;
}

pub struct Registry {
    entries: Vec<Box<dyn Experiment>>,
}

impl Registry {
    pub fn empty() -> Self {
        Registry { entries: Vec::new() }
    }

    /// All built-in experiments.
    pub fn standard() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(identities::VerifyIdentities));
        r.register(Box::new(calibrate::Calibrate));
        r.register(Box::new(crossval::CrossValidate));
        r.register(Box::new(loglaplace::VerifyLogLaplace));
        r.register(Box::new(martingale::VerifyMartingale));
        r.register(Box::new(backbone::VerifyBackbone));
        r.register(Box::new(asymptotics::Asymptotics));
        r.register(Box::new(forest::Forest));
        r
    }

    /// Adds an experiment; a later entry with the same name replaces the earlier one.
    pub fn register(&mut self, e: Box<dyn Experiment>) {
        self.entries.retain(|x| x.name() != e.name());
        self.entries.push(e);
    }

    pub fn get(&self, name: &str) -> Option<&dyn Experiment> {
        self.entries.iter().find(|e| e.name() == name).map(|e| e.as_ref())
    }

    pub fn iter(&self) -> impl Iterator<Item = &dyn Experiment> {
        self.entries.iter().map(|e| e.as_ref())
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|e| e.name()).collect()
    }

    /// Validates `cfg` and runs the named experiment.
    pub fn run(&self, name: &str, cfg: &ExperimentConfig) -> Result<Report> {
        let Some(e) = self.get(name) else {
            bail!("unknown experiment {name}; available: {}", self.names().join(", "));
        };
        cfg.validate()?;
        e.run(cfg)
    }
}

/// The potential family of the configured targets, normalized at the origin.
pub(crate) fn family(cfg: &ExperimentConfig, dom: &DomainModel, targets: &[Point]) -> Result<VFamily> {
    let g = build_field(&cfg.g, dom)?;
    let kind = if g.is_zero() { SingletonKind::Martin } else { SingletonKind::Radial };
    let spec = GridSpec { h: cfg.grid_h, ..Default::default() };
    Ok(build_vfamily(dom, &Point::zeros(dom.dim), targets, g, kind, &spec, &CacheOptions::default())?)
}

/// A label for a subset of targets, as `{1,2}`.
pub(crate) fn set_label(a: exitmeasure::partitions::SubsetId) -> String {
    a.to_string()
}
