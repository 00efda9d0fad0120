//! Command-line pipeline for identifying and steering language-specific
//! neurons: run configuration, staged execution with a fingerprinted
//! artifact directory, and SVG reports.

pub mod artifacts;
pub mod cli;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod report;
pub mod svg;
pub mod synth;

pub use cli::run_cli;
pub use config::RunConfig;
pub use error::{CliError, ExitCode};
pub use pipeline::{run_pipeline, RunSummary};
