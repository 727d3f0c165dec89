//! Experiment harness for the interacting particle Langevin algorithm:
//! JSON experiment configs, sweeps and comparisons, and tidy CSV output.

pub mod commands;
pub mod config;
mod error;
pub mod experiments;
pub mod output;

pub use commands::{execute, Command, Options, Report};
pub use config::ExperimentConfig;
pub use error::LabError;
