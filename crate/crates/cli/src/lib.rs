//! Driver for quantile-emulation experiments: configuration, output
//! directories and the six command verbs.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use config::ExperimentConfig;
pub use error::CliError;
