//! Command-line front end: session files, configuration and reports.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod report;

pub use commands::{run, Cli, Command, Common};
pub use config::{RunConfig, TemplateKind};
pub use error::{CliError, CliResult};
