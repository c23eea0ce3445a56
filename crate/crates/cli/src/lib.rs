//! Command-line front end for the `dhsic` library.

pub mod commands;
pub mod error;
pub mod ingest;
pub mod manifest;

pub use commands::{run, Cli};
pub use error::CliError;
