use std::path::PathBuf;

use thiserror::Error;

/// Every failure the library can report.
///
/// The variants map one-to-one onto the CLI's exit-code classes, see
/// [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("contract error: {0}")]
    Contract(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("missing token: no word of label {label:?} is in the vector table")]
    MissingToken { label: String },

    #[error("capacity error: {0}")]
    Capacity(String),

    #[error("divergence: non-finite loss at step {step}")]
    Divergence { step: usize },

    #[error("verification failed: {0}")]
    Verification(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 config, 3 data/format, 4 divergence, 5 verification.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Parameter(_) => 2,
            Error::Format(_)
            | Error::MissingToken { .. }
            | Error::Capacity(_)
            | Error::Io { .. }
            | Error::Dimension(_) => 3,
            Error::Divergence { .. } => 4,
            Error::Verification(_) | Error::Contract(_) => 5,
        }
    }
}
