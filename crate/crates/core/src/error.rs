use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("FTCS stability violated: D*dt/dx^2 = {ratio} > 0.5")]
    Unstable { ratio: f64 },

    #[error("solution blew up at t = {time}")]
    BlowUp { time: f64 },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("record {index} ({label}): {source}")]
    Record {
        index: usize,
        label: String,
        #[source]
        source: Box<Error>,
    },

    #[error("checkpoint does not match configuration (hash {found}, expected {expected})")]
    ConfigMismatch { expected: String, found: String },

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
