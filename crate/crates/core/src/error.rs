use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic {found:?} (expected \"DPIT\")")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported tensor file version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("truncated tensor file: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },
    #[error("trailing bytes after payload: expected {expected} bytes, found {found}")]
    TrailingBytes { expected: u64, found: u64 },
    #[error("non-finite value {value} at index {index}")]
    NonFinite { index: usize, value: f64 },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("token {token} out of vocabulary (size {vocab})")]
    OutOfVocab { token: usize, vocab: usize },
    #[error("unknown neighbor name {0:?}")]
    UnknownNeighbor(String),
    #[error("non-finite sampler state at step {step}")]
    SamplerDiverged { step: usize },
    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Returns the first non-finite entry, if any.
pub(crate) fn check_finite<T: num_traits::Float>(data: &[T]) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite {
            index,
            value: data[index].to_f64().unwrap_or(f64::NAN),
        }),
        None => Ok(()),
    }
}
