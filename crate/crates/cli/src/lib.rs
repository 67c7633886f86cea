//! Configuration, file formats and subcommands of the `mismatch` tool.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use config::{LossRange, ScenarioConfig};
pub use error::CliError;
