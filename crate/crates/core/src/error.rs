use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid dataset: {0}")]
    Dataset(String),

    #[error("invalid split: {0}")]
    Split(String),

    #[error("annotation budget k={k} outside 1 <= k <= M={max}")]
    BudgetOutOfRange { k: usize, max: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("training diverged: {0}")]
    NonFinite(String),

    #[error("config: {0}")]
    Config(String),

    #[error("cell (k={k}, replicate={replicate}) failed: {source}")]
    Cell {
        k: usize,
        replicate: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{failed} of {total} sweep cells failed; first: {first}")]
    Sweep {
        failed: usize,
        total: usize,
        first: Box<Error>,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by I/O rather than by invalid input or a
    /// failed computation.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }

    /// True for failures raised while running sweep cells.
    pub fn is_runtime(&self) -> bool {
        matches!(self, Error::Cell { .. } | Error::Sweep { .. } | Error::NonFinite(_))
    }
}
