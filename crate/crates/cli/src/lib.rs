//! Subcommands behind the `wwrt` binary: fit, filter, simulate, compare.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod svg;

pub use error::{CliError, Result};
