//! Run configuration: per-experiment defaults, overridden by a JSON file and
//! then by command-line flags.

use anyhow::{bail, Context, Result};
use exitmeasure::diffusion::PathConfig;
use exitmeasure::geometry::DomainModel;
use exitmeasure::Point;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DomainSpec {
    /// Ball of the given radius centered at the origin.
    Ball { radius: f64 },
    /// Ball of radius `radius` centered at height `height` above the plane `x_d = 0`.
    HalfSpaceCap { height: f64, radius: f64 },
}

/// A weighted atom of an initial measure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Atom {
    pub point: Vec<f64>,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dim: usize,
    pub domain: DomainSpec,
    /// Start point.
    pub x: Vec<f64>,
    /// Second point, for ratio experiments.
    pub y: Vec<f64>,
    /// Boundary target points.
    pub targets: Vec<Vec<f64>>,
    /// Nonlinear field: `zero`, `half-space` or `radial-blowup`.
    pub g: String,
    /// Size parameter of the exact suite.
    pub n: usize,
    pub eps_mass: f64,
    pub dt: f64,
    pub replicas: usize,
    /// Replica count of the secondary estimator of an experiment.
    pub aux_replicas: usize,
    pub seed: u64,
    /// Subdomain indices `k`.
    pub levels: Vec<usize>,
    pub lambdas: Vec<f64>,
    /// Cap radii.
    pub eps_list: Vec<f64>,
    /// Grid spacing of the potential solver.
    pub grid_h: f64,
    /// Initial measure of the forest sampler.
    pub mu: Vec<Atom>,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dim: 3,
            domain: DomainSpec::Ball { radius: 1.0 },
            x: vec![0.0; 3],
            y: vec![0.0; 3],
            targets: Vec::new(),
            g: "zero".into(),
            n: 5,
            eps_mass: 1e-3,
            dt: 1e-4,
            replicas: 10_000,
            aux_replicas: 1000,
            seed: 0,
            levels: vec![1],
            lambdas: Vec::new(),
            eps_list: Vec::new(),
            grid_h: 0.02,
            mu: Vec::new(),
            out: PathBuf::from("out"),
        }
    }
}

/// A config file: any subset of the fields of [`ExperimentConfig`].
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub dim: Option<usize>,
    pub domain: Option<DomainSpec>,
    pub x: Option<Vec<f64>>,
    pub y: Option<Vec<f64>>,
    pub targets: Option<Vec<Vec<f64>>>,
    pub g: Option<String>,
    pub n: Option<usize>,
    pub eps_mass: Option<f64>,
    pub dt: Option<f64>,
    pub replicas: Option<usize>,
    pub aux_replicas: Option<usize>,
    pub seed: Option<u64>,
    pub levels: Option<Vec<usize>>,
    pub lambdas: Option<Vec<f64>>,
    pub eps_list: Option<Vec<f64>>,
    pub grid_h: Option<f64>,
    pub mu: Option<Vec<Atom>>,
    pub out: Option<PathBuf>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

macro_rules! merge_fields {
    ($cfg:ident, $file:ident; $($f:ident),*) => {
        $(if let Some(v) = $file.$f { $cfg.$f = v; })*
    };
}

/// Flag overrides applied after the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub replicas: Option<usize>,
    pub out: Option<PathBuf>,
    pub dt: Option<f64>,
    pub eps_mass: Option<f64>,
}

impl ExperimentConfig {
    pub fn merge(mut self, file: ConfigFile) -> Self {
        merge_fields!(self, file; dim, domain, x, y, targets, g, n, eps_mass, dt, replicas,
            aux_replicas, seed, levels, lambdas, eps_list, grid_h, mu, out);
        self
    }

    pub fn apply(mut self, o: &Overrides) -> Self {
        let o = o.clone();
        merge_fields!(self, o; seed, replicas, out, dt, eps_mass);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            bail!("dim must be at least 2, got {}", self.dim);
        }
        for (name, p) in [("x", &self.x), ("y", &self.y)] {
            if p.len() != self.dim {
                bail!("{name} has {} coordinates, expected {}", p.len(), self.dim);
            }
        }
        if let Some(t) = self.targets.iter().find(|t| t.len() != self.dim) {
            bail!("target {t:?} has {} coordinates, expected {}", t.len(), self.dim);
        }
        if let Some(a) = self.mu.iter().find(|a| a.point.len() != self.dim) {
            bail!("atom {:?} has {} coordinates, expected {}", a.point, a.point.len(), self.dim);
        }
        if !(self.eps_mass > 0.0 && self.eps_mass.is_finite()) {
            bail!("eps_mass must be positive, got {}", self.eps_mass);
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            bail!("dt must be positive, got {}", self.dt);
        }
        if self.replicas < 2 {
            bail!("replicas must be at least 2, got {}", self.replicas);
        }
        if let Some(l) = self.lambdas.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
            bail!("lambdas must be finite and nonnegative, got {l}");
        }
        if let Some(e) = self.eps_list.iter().find(|e| !(**e > 0.0)) {
            bail!("eps_list entries must be positive, got {e}");
        }
        if self.levels.contains(&0) {
            bail!("levels are numbered from 1");
        }
        Ok(())
    }

    pub fn domain_model(&self) -> Result<DomainModel> {
        Ok(match self.domain {
            DomainSpec::Ball { radius } => DomainModel::ball(self.dim, radius)?,
            DomainSpec::HalfSpaceCap { height, radius } => DomainModel::half_space_cap(self.dim, height, radius)?,
        })
    }

    /// Path settings with step `dt` and the default boundary layer, widened if `dt` requires.
    pub fn path_config(&self) -> PathConfig {
        let base = PathConfig::default();
        PathConfig { dt: self.dt, bdry_tol: base.bdry_tol.max(3.0 * (self.dim as f64 * self.dt).sqrt()), ..base }
    }

    pub fn x_point(&self) -> Point {
        Point::from_slice(&self.x)
    }

    pub fn y_point(&self) -> Point {
        Point::from_slice(&self.y)
    }

    pub fn target_points(&self) -> Vec<Point> {
        self.targets.iter().map(|t| Point::from_slice(t)).collect()
    }
}
