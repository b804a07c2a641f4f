//! Command-line front end: the batch pipeline and one subcommand per stage.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod pipeline;
pub mod stages;

pub use commands::{run, Cli};
pub use error::{CliError, CliResult};
