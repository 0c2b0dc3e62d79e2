//! Error type shared by every module of the crate.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("window {window:?} larger than grid {grid:?}")]
    WindowTooLarge {
        window: Vec<usize>,
        grid: Vec<usize>,
    },

    #[error("invalid window: {0}")]
    InvalidWindow(String),

    #[error("patches have no jointly valid cells")]
    EmptyOverlap,

    #[error("pair-based index needs at least 2 points, got {0}")]
    TooFewPoints(u64),

    #[error("patch has no valid cells")]
    EmptyPatch,

    #[error("foreground class {fg} out of range for k = {k}")]
    InvalidForeground { fg: u32, k: u32 },

    #[error("grid extent {0:?} too small to downsample")]
    TooSmall(Vec<usize>),

    #[error("no usable windows at level {level}")]
    NoUsableWindows { level: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("out of bounds: {0}")]
    OutOfBounds(String),

    #[error("invalid distortion: {0}")]
    InvalidDistortion(String),

    #[error("vector `{0}` has zero variance")]
    DegenerateVariance(&'static str),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("pair ({i}, {j}): {source}")]
    Pair {
        i: usize,
        j: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("alphabet error: {0}")]
    Alphabet(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
