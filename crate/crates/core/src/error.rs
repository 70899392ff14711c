use std::path::PathBuf;

/// Errors produced by the mining pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid file format in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("unembeddable record: feature set is empty")]
    Unembeddable,

    #[error("degenerate embedding: pre-normalization norm {0:e} is below 1e-12")]
    DegenerateEmbedding(f64),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("unknown record id {0}")]
    UnknownId(u64),

    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error("stale artifact: {0}")]
    StaleArtifact(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    /// True for failures caused by non-finite or degenerate arithmetic.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::Numeric(_)
                | Error::Diverged { .. }
                | Error::DegenerateEmbedding(_)
                | Error::Unembeddable
        )
    }
}
