use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum PpmError {
    #[error("unsupported pixmap format `{0}` (only binary P6 is read)")]
    UnsupportedFormat(String),
    #[error("malformed pixmap header: {0}")]
    MalformedHeader(String),
    #[error("unsupported maxval {0} (only 255 is read)")]
    UnsupportedMaxval(u32),
    #[error("pixel payload truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("image tensor must be [H x W x 3], got {0:?}")]
    BadTensor(Vec<usize>),
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file (bad magic bytes)")]
    BadMagic,
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checkpoint checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("checkpoint is truncated ({0} bytes)")]
    Truncated(usize),
    #[error("checkpoint header is invalid: {0}")]
    Header(String),
    #[error("frozen tensors do not match the recorded seed {0}")]
    FrozenMismatch(u64),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {source}")]
    Ppm {
        path: PathBuf,
        #[source]
        source: PpmError,
    },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Core(#[from] hydraprompt_core::Error),
    #[error("{0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Csv(#[from] csv::Error),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("generator self-check failed: {0}")]
    SelfCheck(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
