//! Command-line driver: configuration, alpha field files and the commands
//! behind the `tvb` binary.

pub mod alpha_file;
pub mod commands;
pub mod config;
pub mod error;

pub use commands::{run, Command};
pub use config::RunConfig;
pub use error::CliError;
