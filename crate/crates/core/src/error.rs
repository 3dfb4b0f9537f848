use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors produced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    NotFound(PathBuf),

    #[error("unsupported audio format: {0}")]
    UnsupportedFormat(String),

    #[error("corrupt WAV header: {0}")]
    CorruptHeader(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("window out of range: start {start} + length {length} exceeds buffer length {available}")]
    OutOfRange {
        start: usize,
        length: usize,
        available: usize,
    },

    #[error("degenerate signal: {0}")]
    DegenerateSignal(&'static str),

    #[error("noise catalog is empty")]
    EmptyCatalog,

    #[error("invalid value for `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },

    #[error("sample rate mismatch: expected {expected} Hz, found {found} Hz")]
    SampleRateMismatch { expected: u32, found: u32 },

    #[error("input too short: {len} samples, need at least {needed}")]
    TooShort { len: usize, needed: usize },

    #[error("attention weight count {weights} does not match frame count {frames}")]
    WeightMismatch { weights: usize, frames: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("zero-norm vector")]
    ZeroVector,

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("trial set has no {0} trials")]
    MissingClass(&'static str),

    #[error("requested {requested} components but only {available} nonzero eigenvalues exist")]
    RankDeficient { requested: usize, available: usize },

    #[error("parse error in {source_name} line {line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        let path = path.into();
        if source.kind() == io::ErrorKind::NotFound {
            Error::NotFound(path)
        } else {
            Error::Io { path, source }
        }
    }

    pub(crate) fn config(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field,
            reason: reason.into(),
        }
    }

    /// True for failures of the filesystem rather than of the inputs' content.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. } | Error::NotFound(_))
    }
}
