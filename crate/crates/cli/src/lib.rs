//! Configuration parsing and command dispatch for the `hdmix` binary.

pub mod commands;
pub mod config;

pub use commands::{run, RunError};
pub use config::{parse_config, Command, ConfigError, RunConfig};
