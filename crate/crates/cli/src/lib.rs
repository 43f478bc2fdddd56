//! Config-driven experiments on top of `slowfast-core`.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use commands::{run_command, Report};
pub use config::{load_config, parse_config, RunConfig};
pub use error::{exit, CliError, ConfigError};
