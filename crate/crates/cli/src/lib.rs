//! Subcommands of the `lookalike` binary: `embed`, `expand`, `simulate` and `oracle`.
//!
//! Every command reads a [`config::RunConfig`], writes its outputs and a
//! `manifest.json` into the configured output directory, and maps failures
//! to exit codes through [`error::CliError::exit_code`].

pub mod config;
pub mod embed;
pub mod error;
pub mod expand;
pub mod io;
pub mod manifest;
pub mod oracle;
pub mod simulate;

pub use config::RunConfig;
pub use error::{CliError, CliResult};
