use thiserror::Error;

pub type Result<T, E = DiffusionError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("timestep {t} outside 1..={steps}")]
    InvalidTimestep { t: usize, steps: usize },

    #[error("invalid model configuration: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Core(#[from] spikeline_core::Error),
}

impl DiffusionError {
    pub(crate) fn shape(expected: impl std::fmt::Debug, actual: impl std::fmt::Debug) -> Self {
        Self::ShapeMismatch {
            expected: format!("{expected:?}"),
            actual: format!("{actual:?}"),
        }
    }
}
