use thiserror::Error;

/// Errors produced by the library.
///
/// Variants are grouped by how a caller should react: bad arguments or
/// configuration, unreadable or malformed data, and violations of numeric
/// invariants that indicate a corrupted state rather than bad input.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("{context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: String,
        expected: String,
        actual: String,
    },

    #[error("graph is disconnected: nodes {component:?} form an isolated component")]
    Disconnected { component: Vec<usize> },

    #[error("integrity violation: {0}")]
    Integrity(String),

    #[error("instance too large: {size} exceeds limit {limit}")]
    TooLarge { size: u64, limit: u64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn integrity(msg: impl Into<String>) -> Self {
        Error::Integrity(msg.into())
    }

    pub fn dimensions(
        context: impl Into<String>,
        expected: impl std::fmt::Display,
        actual: impl std::fmt::Display,
    ) -> Self {
        Error::DimensionMismatch {
            context: context.into(),
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
