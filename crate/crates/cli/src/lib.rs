//! File formats, configuration and subcommands of the `phaseret` pipeline.

pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod formats;

pub use config::PipelineConfig;
pub use error::CliError;
