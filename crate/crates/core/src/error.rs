//! Error type shared by the whole crate.

use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),

    #[error("unsupported png ({path}): {detail}")]
    UnsupportedPng { path: PathBuf, detail: String },

    #[error("corrupt png stream ({path}): {detail}")]
    CorruptPng { path: PathBuf, detail: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("frame values outside [0, 1]: {0}")]
    ValueOutOfRange(String),

    #[error("no {0} run of white flag frames found")]
    FlagFramesNotFound(&'static str),

    #[error("insufficient keypoint matches: found {found}, need {needed}")]
    InsufficientMatches { found: usize, needed: usize },

    #[error("degenerate point configuration: {0}")]
    DegenerateGeometry(String),

    #[error("ransac found no model with enough inliers (best {best}, need {needed})")]
    RansacFailed { best: usize, needed: usize },

    #[error("homography is not invertible")]
    SingularHomography,

    #[error("bad flow file ({path}): {detail}")]
    BadFlowFile { path: PathBuf, detail: String },

    #[error("bad checkpoint ({path}): {detail}")]
    BadCheckpoint { path: PathBuf, detail: String },

    #[error("flow inputs required for the flow-based temporal loss")]
    MissingFlowInputs,

    #[error("training dataset is empty")]
    EmptyDataset,

    #[error("clip too short: {len} frames, need at least {needed}")]
    ClipTooShort { len: usize, needed: usize },

    #[error("forward cache does not match current parameters (stale cache)")]
    StaleCache,

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}
