use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid skeleton: {0}")]
    InvalidSkeleton(String),

    #[error("joint index {index} out of range (K = {k})")]
    JointOutOfRange { index: usize, k: usize },

    #[error("pose has no visible joints")]
    NoVisibleJoints,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("mode mismatch: expected {expected} maps, got {found}")]
    ModeMismatch { expected: String, found: String },

    #[error("joint {joint} is present but its ancestor {ancestor} is missing")]
    MissingPathEntry { joint: usize, ancestor: usize },

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },

    #[error("format error: {0}")]
    Format(String),

    /// `origin` names the file when known, otherwise it is empty.
    #[error("{origin}checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { origin: String, stored: u32, computed: u32 },

    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    RawIo(#[from] std::io::Error),
}

/// Broad failure classes, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Io,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Io { .. } | Error::RawIo(_) => ErrorClass::Io,
            Error::InvalidArgument(_) => ErrorClass::Usage,
            _ => ErrorClass::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
