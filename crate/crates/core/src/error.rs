use thiserror::Error;

/// Errors produced by the calibration library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error("point lies on the line at infinity of the projective map")]
    PointAtInfinity,

    #[error("point is behind the camera (depth {depth:.3e})")]
    BehindCamera { depth: f64 },

    #[error("not enough points: need at least {needed}, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("insufficient edge points: edge {edge} has {got} points, need at least 2")]
    InsufficientEdgePoints { edge: usize, got: usize },

    #[error("empty point cloud")]
    EmptyCloud,

    #[error("optimizer failed: {0}")]
    Optimizer(String),

    #[error("no overlap between projected polygons at the initial guess; provide a better initial extrinsic")]
    NoOverlap,

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("io error: {0}")]
    Io(String),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
