use std::path::PathBuf;

/// Crate-wide error type.
///
/// The variants map onto the CLI exit codes: configuration problems exit
/// with 2, data problems with 3, numerical divergence with 4, everything
/// else with 1.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("checksum mismatch for {path}: expected {expected}, found {actual}")]
    Corruption {
        path: PathBuf,
        expected: String,
        actual: String,
    },

    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("numerical divergence at iteration {iteration}: {term} is not finite")]
    Divergence { iteration: u64, term: String },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn dimension(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub fn protocol(msg: impl Into<String>) -> Self {
        Error::Protocol(msg.into())
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 0 success, 2 config, 3 data, 4 divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Validation(_) | Error::Dimension(_) | Error::Protocol(_) => 2,
            Error::Data(_) | Error::Corruption { .. } | Error::Io { .. } => 3,
            Error::Divergence { .. } => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
