use std::path::PathBuf;

use loadsafe_core::dataset::ClassLabel;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("unknown submission `{0}`")]
    NotFound(String),

    #[error("submission `{0}` was rejected at intake and is not in the review queue")]
    NotQueued(String),

    #[error("submission `{0}` is not claimed by this operator")]
    NotClaimed(String),

    #[error("submission `{id}` is claimed by operator `{operator}`")]
    ClaimedByOther { id: String, operator: String },

    #[error("the lease on submission `{0}` has expired; claim it again")]
    LeaseExpired(String),

    #[error("submission `{id}` was already decided as {existing}")]
    Conflict { id: String, existing: ClassLabel },

    #[error("nothing to export: no submission has been decided")]
    NothingDecided,

    #[error("unsupported image: {0}")]
    BadImage(String),

    #[error("invalid request: {0}")]
    InvalidArgument(String),

    #[error("event log line {line} is invalid: {reason}")]
    CorruptLog { line: usize, reason: String },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] loadsafe_core::Error),
}

impl ServiceError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ServiceError::Io { path: path.into(), source }
    }

    /// Stable machine-readable name used in HTTP error bodies.
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::NotFound(_) => "not_found",
            ServiceError::NotQueued(_) => "not_queued",
            ServiceError::NotClaimed(_) => "not_claimed",
            ServiceError::ClaimedByOther { .. } => "claimed_by_other",
            ServiceError::LeaseExpired(_) => "lease_expired",
            ServiceError::Conflict { .. } => "conflict",
            ServiceError::NothingDecided => "nothing_decided",
            ServiceError::BadImage(_) => "bad_image",
            ServiceError::InvalidArgument(_) => "invalid_argument",
            ServiceError::CorruptLog { .. } => "corrupt_log",
            ServiceError::Io { .. } | ServiceError::Core(_) => "internal",
        }
    }
}

pub type Result<T, E = ServiceError> = std::result::Result<T, E>;
