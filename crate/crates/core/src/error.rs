use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, UpliftError>;

#[derive(Debug, Error)]
pub enum UpliftError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("data error at row {row}: {message}")]
    DataRow { row: usize, message: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("shape mismatch: expected {expected}, found {found}")]
    Shape { expected: String, found: String },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("missing artifact: expected {}", .0.display())]
    MissingArtifact(PathBuf),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl UpliftError {
    pub(crate) fn shape(expected: impl ToString, found: impl ToString) -> Self {
        UpliftError::Shape {
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    /// Process exit code: 2 config, 3 data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            UpliftError::Config(_) | UpliftError::Contract(_) => 2,
            UpliftError::Numeric(_) => 4,
            _ => 3,
        }
    }
}
