use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("architecture rejected at layer {layer}: {reason}")]
    Architecture { layer: usize, reason: String },

    #[error("parameter `{0}` has no gradient")]
    MissingGrad(String),

    #[error("image error: {0}")]
    Image(String),

    #[error("manifest line {line}: {reason}")]
    ManifestParse { line: usize, reason: String },

    #[error("duplicate record id `{0}` in manifest")]
    DuplicateId(String),

    #[error("record `{id}` references missing file {}", path.display())]
    MissingFile { id: String, path: PathBuf },

    #[error("empty {0}")]
    Empty(String),

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("checkpoint checksum mismatch")]
    Checksum,

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
