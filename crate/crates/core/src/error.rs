use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing file: {0}")]
    MissingFile(PathBuf),

    #[error("image codec error on {path}: {message}")]
    Codec { path: PathBuf, message: String },

    #[error("dimension mismatch: {what} ({expected:?} vs {found:?})")]
    DimensionMismatch {
        what: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("feature dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },

    #[error("unknown label id {0} (not present in label table)")]
    UnknownLabel(u8),

    #[error("no face-region cell is active")]
    EmptyFace,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("prompt ({row}, {col}) outside grid {grid_h}x{grid_w}")]
    OutOfBounds {
        row: usize,
        col: usize,
        grid_h: usize,
        grid_w: usize,
    },

    #[error("degenerate similarity distribution: all face-cell values are equal ({0})")]
    DegenerateOtsu(f64),

    #[error("malformed feature file {path}: {message}")]
    MalformedFeatures { path: PathBuf, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("backend error: {0}")]
    Backend(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }
}
