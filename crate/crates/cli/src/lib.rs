//! Experiment driver for the `lrflow` binary: configuration, file formats
//! and one function per command.

pub mod commands;
pub mod config;
pub mod error;
pub mod formats;

pub use commands::{run, Command};
pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
