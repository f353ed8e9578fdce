use std::io;

use thiserror::Error;

/// Errors raised anywhere in the density pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input")]
    EmptyInput,
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("{0}")]
    InvalidParameter(String),
    #[error("degenerate bounding box: width {width}, height {height}")]
    DegenerateBounds { width: f64, height: f64 },
    #[error("nothing to cluster at this threshold")]
    NothingToCluster,
    #[error("cannot split cluster {0}: it holds a single bin")]
    CannotSplit(usize),
    #[error("unknown cluster {0}")]
    UnknownCluster(usize),
    #[error("unknown harmonic template {0:?}")]
    UnknownTemplate(String),
    #[error("line id mismatch: {0}")]
    IdMismatch(String),
    #[error("feature cache: {0}")]
    Cache(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("png encoding: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
