//! Command-line experiments over the `momsq` library.
//!
//! Every run is split into independent entries keyed by JSON values, so a
//! report can be replayed entry by entry.

pub mod commands;
pub mod report;
pub mod svg;

use std::fmt;

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments or a violated precondition; exit code 2.
    Usage(String),
    /// A computation or check failed; exit code 1.
    Failed(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Failed(m) => write!(f, "failed: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failed(_) => 1,
        }
    }
}

impl From<momsq::Error> for CliError {
    fn from(e: momsq::Error) -> Self {
        CliError::Failed(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Failed(format!("io: {e}"))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Failed(format!("json: {e}"))
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Environment variable naming the default output directory.
pub const OUT_DIR_VAR: &str = "MOMSQ_OUT_DIR";
