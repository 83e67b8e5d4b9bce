use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("allocation error: {0}")]
    Allocation(String),

    #[error("pilot placement error: {0}")]
    Placement(String),

    #[error("channel realization error: {0}")]
    Realization(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("estimation error: {0}")]
    Estimation(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by invalid user input rather than runtime failures.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Allocation(_) | Error::Placement(_)
        )
    }
}
