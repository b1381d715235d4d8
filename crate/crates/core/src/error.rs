//! Crate-wide error type.

/// Convenience alias used across the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by geometry, graph, network, evaluation and I/O code.
#[derive(thiserror::Error, Debug)]
pub enum Error {
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),

    #[error("depth must be positive, got {0}")]
    NonPositiveDepth(f64),

    #[error("operation requires a non-empty point set")]
    EmptyPointSet,

    #[error("group of size {size} is too small, need at least {min}")]
    GroupTooSmall { size: usize, min: usize },

    #[error("index {index} out of bounds for set of size {len}")]
    IndexOutOfBounds { index: usize, len: usize },

    #[error("requested {requested} items but only {available} are available")]
    CountExceedsPoints { requested: usize, available: usize },

    #[error("scale estimation degenerate: every point sits at its centroid")]
    DegenerateScale,

    #[error("feature rows must have width {expected}, got {got}")]
    FeatureWidth { expected: usize, got: usize },

    #[error("operation requires ground-truth labels")]
    MissingLabels,

    #[error("operation requires a ground-truth pose")]
    MissingPose,

    #[error("need at least {min} correspondences, got {got}")]
    NotEnoughCorrespondences { min: usize, got: usize },

    #[error("RANSAC found no hypothesis with sufficient consensus")]
    NoConsensus,

    #[error("non-finite value encountered in {context}")]
    NonFinite { context: String },

    #[error("training diverged at epoch {epoch} (loss = {loss})")]
    Diverged { epoch: usize, loss: f64 },

    #[error("scene generation failed: {0}")]
    Generation(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("bad file format: {0}")]
    Format(String),

    #[error("invalid config value for `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
