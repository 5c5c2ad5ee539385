use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{source_name}:{line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },

    #[error("{source_name}:{line}: feature dimension {found} does not match {expected}")]
    Dimension {
        source_name: String,
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("reference error: {0}")]
    Reference(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("invalid tree schemas: {}", .0.join("; "))]
    Schema(Vec<String>),

    #[error("shape mismatch in {op}: {shapes}")]
    Shape { op: &'static str, shapes: String },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
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

    /// True for errors caused by malformed or inconsistent input rather than
    /// arithmetic breakdown or the environment.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Dimension { .. }
                | Error::Reference(_)
                | Error::Contract(_)
                | Error::Schema(_)
                | Error::Shape { .. }
                | Error::Json(_)
        )
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Numeric(_))
    }
}
