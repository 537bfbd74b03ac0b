//! Command-line front end: configuration, commands, snapshots and reports.

pub mod commands;
pub mod config;
pub mod error;
pub mod report;
pub mod table;
pub mod vtk;

pub use error::{CliError, CliResult};
