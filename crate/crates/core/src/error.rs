use std::path::PathBuf;

use thiserror::Error;

/// Why a least-squares disparity alignment has no unique solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Degeneracy {
    /// Fewer than two jointly valid pixels.
    TooFewPoints(usize),
    /// The prediction is constant over the jointly valid pixels, so the gain is undetermined.
    ConstantPrediction,
}

impl std::fmt::Display for Degeneracy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Degeneracy::TooFewPoints(n) => write!(f, "only {n} jointly valid pixels"),
            Degeneracy::ConstantPrediction => write!(f, "prediction is constant"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("directory not found: {0}")]
    MissingDirectory(PathBuf),

    #[error("no numbered frames found in {0}")]
    EmptyClip(PathBuf),

    #[error(
        "{path}: expected {expected_width}x{expected_height}, found {found_width}x{found_height}"
    )]
    FrameDimensionMismatch {
        path: PathBuf,
        expected_width: usize,
        expected_height: usize,
        found_width: usize,
        found_height: usize,
    },

    #[error("failed to read {path}: {message}")]
    Unreadable { path: PathBuf, message: String },

    #[error("{path}: malformed PFM header: {reason}")]
    PfmHeader { path: PathBuf, reason: String },

    #[error("{path}: expected a single-channel PFM, found {channels} channels")]
    PfmChannels { path: PathBuf, channels: usize },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no valid pixels: {0}")]
    EmptyValidSet(String),

    #[error("image too small: {0}")]
    TooSmall(String),

    #[error("degenerate alignment: {0}")]
    DegenerateAlignment(Degeneracy),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
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

pub type Result<T> = std::result::Result<T, Error>;
