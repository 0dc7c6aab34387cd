//! Self-contained pipeline that mines pseudo ground-truth 3D bounding boxes
//! from lidar point-cloud sequences using motion cues (scene flow + ego-motion),
//! regularizes them with flow-based tracking and jerk-minimizing smoothing, and
//! iteratively refines them by self-training a pluggable detector.
//!
//! The crate is organized along the pipeline stages:
//!
//! - [`geom`]: boxes, points, flow vectors, rigid transforms
//! - [`io`]: on-disk sequence and box formats
//! - [`synth`]: deterministic synthetic worlds with exact flow and ego-motion
//! - [`cluster`]: residual flow, static filtering, 6D DBSCAN, box fitting
//! - [`tracker`]: flow-based forward/reverse tracking in a world-fixed frame
//! - [`trackopt`]: jerk-minimizing track smoothing, heading alignment, size voting
//! - [`selftrain`]: self-training orchestration over an abstract detector
//! - [`eval`]: rotated IoU, average precision, orientation error
//! - [`pipeline`]: stage composition, configuration, deterministic seeding

pub mod cluster;
pub mod eval;
pub mod geom;
pub mod io;
pub mod pipeline;
pub mod selftrain;
pub mod synth;
pub mod tracker;
pub mod trackopt;

use std::path::PathBuf;

/// Crate-wide error type. `is_validation` distinguishes bad inputs/parameters
/// (CLI exit code 1) from runtime failures (exit code 2).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("missing file: {0}")]
    MissingFile(PathBuf),
    #[error("length mismatch in {what} ({path}): expected {expected}, got {got}")]
    LengthMismatch {
        what: String,
        path: PathBuf,
        expected: usize,
        got: usize,
    },
    #[error("non-finite value in {what} at index {index}")]
    NonFinite { what: String, index: usize },
    #[error("{path}:{line}: malformed record: {msg}")]
    MalformedLine {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error("detector failed: {0}")]
    Detector(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn is_validation(&self) -> bool {
        match self {
            Error::MissingFile(_)
            | Error::LengthMismatch { .. }
            | Error::NonFinite { .. }
            | Error::MalformedLine { .. }
            | Error::InvalidParam(_) => true,
            Error::Stage { source, .. } => source.is_validation(),
            Error::Detector(_) | Error::Io(_) => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
