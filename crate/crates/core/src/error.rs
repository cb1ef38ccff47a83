use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CudError>;

#[derive(Debug, Error)]
pub enum CudError {
    /// A hyperparameter or index is outside its admissible range.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// An input lies outside the domain of the operation (e.g. log of zero mass).
    #[error("domain error: {0}")]
    Domain(String),

    /// An iterative routine failed to converge or produced non-finite values.
    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    /// CSV ingestion failure. `row` is the 1-based line number in the file.
    #[error("{path}: row {row}: {message}")]
    Ingest {
        path: String,
        row: usize,
        message: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl CudError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CudError::Io {
            path: path.into(),
            source,
        }
    }
}
