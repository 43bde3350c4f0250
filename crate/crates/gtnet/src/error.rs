//! Crate-wide error type and exit-code mapping.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, GtError>;

#[derive(Debug, thiserror::Error)]
pub enum GtError {
    /// Invalid model/train configuration or contradictory flags.
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed runtime input (bad shapes, wrong resolution, missing modality).
    #[error("input error: {0}")]
    Input(String),

    /// Values outside their declared domain (e.g. mask outside [0,1]).
    #[error("domain error: {0}")]
    Domain(String),

    /// Dataset directory violates the expected layout.
    #[error("ingestion error: {reason} ({path})")]
    Ingestion { path: PathBuf, reason: String },

    /// Loss became non-finite during optimization.
    #[error("training diverged at step {step}: {reason}")]
    TrainingDiverged { step: usize, reason: String },

    /// Checkpoint does not match the requested configuration.
    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl GtError {
    /// Process exit code contract: 0 success, 1 runtime/training failure,
    /// 2 usage/config error.
    pub fn exit_code(&self) -> i32 {
        match self {
            GtError::Config(_)
            | GtError::Input(_)
            | GtError::Domain(_)
            | GtError::Ingestion { .. }
            | GtError::CheckpointMismatch(_) => 2,
            GtError::TrainingDiverged { .. }
            | GtError::Io(_)
            | GtError::Image(_)
            | GtError::Json(_)
            | GtError::Csv(_) => 1,
        }
    }
}
