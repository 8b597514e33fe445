use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input file; `line` is 1-based (0 when the whole file is at fault).
    #[error("{}:{line}: {message}", path.display())]
    Load {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data integrity error: {0}")]
    Integrity(String),

    #[error("training diverged (seed {seed}, epoch {epoch}): {message}")]
    Divergence { seed: u64, epoch: usize, message: String },

    #[error("external resource unavailable: {0}")]
    External(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn load(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Load {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    /// Process exit code: 1 usage, 2 data integrity, 3 external resource.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Load { .. }
            | Error::Validation(_)
            | Error::Integrity(_)
            | Error::Divergence { .. }
            | Error::Json(_)
            | Error::Csv(_) => 2,
            Error::Io { .. } | Error::External(_) => 3,
        }
    }
}
