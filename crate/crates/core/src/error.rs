use thiserror::Error;

/// Errors raised by the numerical and combinatorial routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid subset: {0}")]
    InvalidSubset(String),
    #[error("not a subset of the ground set: {0}")]
    NotSubset(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("point lies outside the domain: {0}")]
    OutsideDomain(String),
    #[error("degenerate target configuration: {0}")]
    DegenerateTarget(String),
    #[error("unsupported configuration: {0}")]
    Unsupported(String),
    #[error("field diverges: {0}")]
    Divergent(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("population cap of {cap} particles exceeded")]
    PopulationCap { cap: usize },
    #[error("step budget of {max_steps} steps exhausted")]
    StepBudget { max_steps: usize },
    #[error("cache error: {0}")]
    Cache(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
