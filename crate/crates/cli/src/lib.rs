//! Command-line front end for `selpred-core`.

pub mod args;
pub mod commands;
pub mod error;
pub mod ingest;
pub mod report;
pub mod svg;

pub use error::{CliError, Result};
