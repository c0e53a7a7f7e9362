//! Experiment runner for the exit-measure library: configuration, the
//! experiment registry and result reporting.

pub mod config;
pub mod experiments;
pub mod report;
