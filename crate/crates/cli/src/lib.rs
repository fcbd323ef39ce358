//! Pipeline stages behind the `pdmpq` binary.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod error;

pub use commands::Context;
pub use config::RunConfig;
pub use error::CliError;
