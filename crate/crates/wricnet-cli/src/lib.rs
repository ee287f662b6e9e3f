//! File formats and command plumbing around the core change-detection stack:
//! run configuration, PNG ingestion, checkpoint and log files, dataset
//! preparation, and the six commands behind the `wricnet` binary.

#![forbid(unsafe_code)]

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod logs;
pub mod pngio;

use std::fmt;

/// Process-level failure classes, mapped one-to-one onto exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Bad configuration, unusable inputs, missing files — exit code 1.
    Validation(String),
    /// A checked numerical or structural invariant failed — exit code 2.
    Invariant(String),
}

impl CliError {
    pub fn validation(msg: impl fmt::Display) -> CliError {
        CliError::Validation(msg.to_string())
    }

    pub fn invariant(msg: impl fmt::Display) -> CliError {
        CliError::Invariant(msg.to_string())
    }

    #[must_use]
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Invariant(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(msg) => write!(f, "{msg}"),
            CliError::Invariant(msg) => write!(f, "invariant violated: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<String> for CliError {
    fn from(msg: String) -> CliError {
        CliError::Validation(msg)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> CliError {
        CliError::Validation(e.to_string())
    }
}

impl From<image::ImageError> for CliError {
    fn from(e: image::ImageError) -> CliError {
        CliError::Validation(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> CliError {
        CliError::Validation(e.to_string())
    }
}

impl From<toml::de::Error> for CliError {
    fn from(e: toml::de::Error) -> CliError {
        CliError::Validation(e.to_string())
    }
}

impl From<toml::ser::Error> for CliError {
    fn from(e: toml::ser::Error) -> CliError {
        CliError::Validation(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Adds file-path context to an IO-flavored error.
pub(crate) fn at_path<T, E: fmt::Display>(
    r: std::result::Result<T, E>,
    what: &str,
    path: &std::path::Path,
) -> Result<T> {
    r.map_err(|e| CliError::Validation(format!("{what} {}: {e}", path.display())))
}
