//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("manifest {path}, line {line}: {msg}")]
    ManifestSchema {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("duplicate sample_id `{0}` in manifest")]
    DuplicateSampleId(String),

    #[error("landmark file {path}: expected 98 points, found {found}")]
    LandmarkCount { path: PathBuf, found: usize },

    #[error("landmark file {path}, point {index}: ({x}, {y}) outside frame {width}x{height}")]
    LandmarkOutOfBounds {
        path: PathBuf,
        index: usize,
        x: f64,
        y: f64,
        width: u32,
        height: u32,
    },

    #[error("image {path}: expected {expected_w}x{expected_h}, got {got_w}x{got_h}")]
    ImageSize {
        path: PathBuf,
        expected_w: u32,
        expected_h: u32,
        got_w: u32,
        got_h: u32,
    },

    #[error("image error on {path}: {msg}")]
    Image { path: PathBuf, msg: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{0}")]
    InvalidInput(String),

    #[error("manifest contains a single class; both bona fide and attack samples are required")]
    SingleClass,

    #[error("k={k} exceeds the number of distinct subjects ({subjects})")]
    TooFewSubjects { k: usize, subjects: usize },

    #[error("degenerate landmarks: points are coincident or collinear")]
    DegenerateLandmarks,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("no attention row for sample `{0}`")]
    MissingAttention(String),

    #[error("{0}")]
    Runtime(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input (missing files, bad config,
    /// malformed data) rather than failures while doing the work.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Runtime(_) => false,
            // a path that does not exist is the user's problem; any other
            // i/o failure happened mid-work
            Error::Io { source, .. } => source.kind() == std::io::ErrorKind::NotFound,
            _ => true,
        }
    }
}
