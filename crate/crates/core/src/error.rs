use std::path::PathBuf;

use thiserror::Error;

/// Parse failures for the binary tensor and checkpoint containers.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("rank {0} exceeds the supported maximum of 4")]
    RankTooLarge(u32),
    #[error("dimension overflow: element count of {0:?} does not fit in memory")]
    DimOverflow(Vec<u32>),
    #[error("truncated payload: needed {needed} bytes, {available} available")]
    Truncated { needed: usize, available: usize },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("unsupported container version {0}")]
    Version(u32),
    #[error("invalid entry name: {0}")]
    InvalidName(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("missing input file: {0}")]
    MissingFile(PathBuf),
    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: ParseError,
    },
    #[error(transparent)]
    Format(#[from] ParseError),
    #[error("{path}: invalid JSON: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("wav error: {0}")]
    Wav(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("out of range: {0}")]
    Range(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("tensor backend: {0}")]
    Backend(#[from] candle_core::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
