use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library can report.
#[derive(Debug, Error)]
pub enum Error {
    /// The shape or layout of an input is wrong (ragged rows, bad ordering, mismatched dims).
    #[error("structural error: {0}")]
    Structural(String),

    /// A value inside an otherwise well-formed input is invalid.
    #[error("data error at row {row}, column {column}: {message}")]
    Data {
        row: usize,
        column: usize,
        message: String,
    },

    /// A data error that is not tied to a cell position.
    #[error("data error: {0}")]
    InvalidData(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// Arguments passed to a fitted model or an operation do not match its expectations.
    #[error("input error: {0}")]
    Input(String),

    #[error("training diverged at epoch {epoch}: {message}")]
    Training { epoch: usize, message: String },

    #[error("model container error: {0}")]
    Container(String),

    #[error("checksum mismatch: expected {expected:08x}, found {found:08x}")]
    Checksum { expected: u32, found: u32 },

    #[error("unsupported container version {found} (expected {expected})")]
    Version { expected: u32, found: u32 },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn data(row: usize, column: usize, message: impl Into<String>) -> Self {
        Error::Data {
            row,
            column,
            message: message.into(),
        }
    }
}
