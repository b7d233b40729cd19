//! Reproducible runs on top of the `sensorlm` library: run configuration,
//! run-directory layout and the subcommands of the `sensorlm` binary.

pub mod cli;
pub mod commands;
pub mod config;
pub mod experiment;
pub mod layout;

pub use cli::{run, Cli};
