//! Command-line front for the extraction lab: configuration resolution,
//! dataset acquisition, and the per-subcommand pipelines. The binary in
//! `main.rs` only parses arguments and maps errors to exit codes; all
//! behavior lives here so tests can drive it in-process.

pub mod config;
pub mod dataset;
pub mod pipeline;

use std::fmt;

/// Process exit code for configuration problems.
pub const EXIT_CONFIG: i32 = 1;
/// Process exit code for missing or malformed data.
pub const EXIT_DATA: i32 = 2;
/// Process exit code for failed checks and failed runs.
pub const EXIT_FAILURE: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("{0}")]
    Failure(String),
}

impl CliError {
    pub fn config(msg: impl fmt::Display) -> Self {
        CliError::Config(msg.to_string())
    }

    pub fn data(msg: impl fmt::Display) -> Self {
        CliError::Data(msg.to_string())
    }

    pub fn failure(msg: impl fmt::Display) -> Self {
        CliError::Failure(msg.to_string())
    }

    /// Library errors raised while acquiring or parsing datasets.
    pub fn from_data(err: seqlab::Error) -> Self {
        CliError::Data(err.to_string())
    }

    /// Library errors raised by invalid run parameters.
    pub fn from_config(err: seqlab::Error) -> Self {
        match err {
            seqlab::Error::Io(_) | seqlab::Error::DataFormat(_) => CliError::Data(err.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Data(_) => EXIT_DATA,
            CliError::Failure(_) => EXIT_FAILURE,
        }
    }
}
