//! Scenario runner for the disturbance-rejection controllers in `mdr-core`.

pub mod commands;
pub mod error;
pub mod report;
pub mod scenario;

pub use error::{CliError, CliResult};
