//! Subcommand implementations for the `gctaf` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod pipeline;

pub use config::RunConfig;
pub use error::{exit, CliError, Result};
