//! Experiment runner for the distillation workbench: TOML configs, run
//! directories, sweeps, and CSV/SVG reports.

pub mod chart;
pub mod commands;
pub mod config;
pub mod error;
pub mod report;
pub mod run;
pub mod sweep;
pub mod table;

pub use config::ExperimentConfig;
pub use error::{CliError, Result};
