//! Configuration, file formats and subcommands of the `qefl` tool.

pub mod commands;
pub mod config;
pub mod experiment;
pub mod model_file;

pub use config::RunConfig;
