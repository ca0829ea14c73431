//! Experiment harness for the `indexfree` solvers.
//!
//! Every subcommand runs seeded trials, writes a CSV (a `#` comment line
//! with the version and resolved config, then a header row) and sometimes
//! an SVG chart. Outputs depend only on the config and seed, never on the
//! worker count.

pub mod commands;
pub mod output;
pub mod problem_doc;
pub mod settings;
pub mod stats;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
}
