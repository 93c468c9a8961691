//! Command-line plumbing around `perc-core`: the run config, manifest
//! ingestion, the `train` / `attack` / `evaluate` / `report` commands and
//! their file formats.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod manifest;
pub mod render;

pub use commands::Context;
pub use config::RunConfig;
pub use error::{CliError, Result};
