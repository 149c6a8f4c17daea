use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("out of bounds: {0}")]
    OutOfBounds(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("could not place occluder {index} in scene {scene_id} after {attempts} attempts")]
    PlacementFailure {
        scene_id: usize,
        index: usize,
        attempts: usize,
    },

    #[error("trajectory does not fit: {0}")]
    DoesNotFit(String),

    #[error("degenerate normalization axis {axis} for scene {scene_id}")]
    DegenerateAxis { scene_id: usize, axis: char },

    #[error("invalid quaternion: {0}")]
    InvalidQuaternion(String),

    #[error("{path}:{line}: parse error: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("sample {sample_id} references missing file {path}")]
    ReferentialIntegrity { sample_id: u64, path: PathBuf },

    #[error("incompatible branches: rgb truncation width {rgb}, point-cloud truncation width {pc}")]
    IncompatibleBranch { rgb: usize, pc: usize },

    #[error("training diverged in {stage} at epoch {epoch}: non-finite loss")]
    Divergence { stage: String, epoch: usize },

    #[error("bundle integrity: {0}")]
    BundleIntegrity(String),

    #[error("incomparable reports: {0}")]
    IncomparableReports(String),

    #[error("stage `{stage}` requires stage `{missing}` to be completed first")]
    Dependency { stage: String, missing: String },

    #[error("stale artifact in stage `{stage}`: recorded config hash {found}, current {expected}")]
    StaleArtifact {
        stage: String,
        found: String,
        expected: String,
    },

    #[error("run directory {0} is locked by another writer")]
    Locked(PathBuf),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("decode error: {0}")]
    Decode(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Process exit code used by the `aps` command line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) => 2,
            Error::Dependency { .. } | Error::StaleArtifact { .. } => 3,
            Error::Divergence { .. } => 4,
            _ => 1,
        }
    }
}
