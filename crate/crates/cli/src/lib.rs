//! Experiment driver: configuration, run directories, the subcommands and
//! parameter sweeps.

pub mod commands;
pub mod config;
pub mod sweep;

pub use commands::{EvalOptions, RunDir};
pub use config::{ExperimentConfig, Protocol, SweepAxis, SweepConfig};
