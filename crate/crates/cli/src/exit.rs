//! Maps failures to process exit codes: 2 for usage and configuration
//! problems, 3 for unreadable or malformed data.

use std::fmt;

use spikeline_core::Error as CoreError;
use spikeline_diffusion::DiffusionError;

pub const USAGE: u8 = 2;
pub const DATA: u8 = 3;

/// An error that already knows its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Failure {}

pub fn usage(message: impl Into<String>) -> anyhow::Error {
    Failure {
        code: USAGE,
        message: message.into(),
    }
    .into()
}

fn core_code(e: &CoreError) -> u8 {
    match e {
        CoreError::Config(_)
        | CoreError::ResolutionMismatch { .. }
        | CoreError::WindowOutOfBounds { .. }
        | CoreError::FrameOutOfBounds { .. }
        | CoreError::InvalidGain(_)
        | CoreError::NonFiniteIntensity { .. }
        | CoreError::NegativeIntensity { .. } => USAGE,
        _ => DATA,
    }
}

pub fn code_for(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(f) = cause.downcast_ref::<Failure>() {
            return f.code;
        }
        if let Some(e) = cause.downcast_ref::<CoreError>() {
            return core_code(e);
        }
        if let Some(e) = cause.downcast_ref::<DiffusionError>() {
            return match e {
                DiffusionError::Core(inner) => core_code(inner),
                DiffusionError::ShapeMismatch { .. } => DATA,
                _ => USAGE,
            };
        }
    }
    DATA
}

/// Fails with exit code 2 unless `path` exists.
pub fn require_input(path: &std::path::Path) -> anyhow::Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(usage(format!("input not found: {}", path.display())))
    }
}
