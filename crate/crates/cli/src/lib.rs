//! Command-line front end: config files, subcommands, the invariant suite,
//! the orientation-count benchmark and descriptor visualizations.

pub mod bench;
pub mod check;
pub mod commands;
pub mod config;
pub mod error;
pub mod viz;

pub use commands::{run, Cli, Command};
pub use error::{CliError, CliResult};
