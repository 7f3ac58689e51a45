//! Command-line front end: run configuration, subcommands and exit codes.

pub mod app;
pub mod commands;
pub mod config;

pub use app::{exit_code, run, Cli};
pub use config::RunConfig;
