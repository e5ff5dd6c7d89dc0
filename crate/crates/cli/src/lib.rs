//! Batch front end: configuration, run records, sweeps and plots.

pub mod commands;
pub mod config;
pub mod error;
pub mod record;
pub mod svg;
pub mod sweep;
pub mod trajectory;

pub use error::{CliError, CliResult};
