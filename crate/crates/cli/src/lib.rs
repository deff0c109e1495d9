//! Experiment harness behind the `appo-lab` binary: dataset generation,
//! estimator fitting, training runs, parameter sweeps and the invariant
//! suite, all driven by one JSON-plus-flags configuration.

pub mod commands;
pub mod config;
pub mod error;
pub mod experiment;

pub use config::{Algo, Corruption, ExperimentConfig, Overrides, SweepGrid};
pub use error::{CliError, CliResult};
pub use experiment::{Inputs, ResultRow};
