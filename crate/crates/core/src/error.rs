use std::io;

/// Errors raised anywhere in the simulation and analysis pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("feedback loop is unstable: {0}")]
    Unstable(String),

    #[error("simulation diverged at step {step}: non-finite state")]
    Diverged { step: u64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("no peak found: {0}")]
    NoPeak(String),

    #[error("fit did not converge after {iterations} iterations")]
    NotConverged { iterations: usize },

    #[error("fit failed: {0}")]
    FitFailed(String),

    #[error("degenerate calibration: {0}")]
    DegenerateCalibration(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// Numerical failures (divergence, non-convergence, missing peaks) as
    /// opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Diverged { .. }
                | Error::NoPeak(_)
                | Error::NotConverged { .. }
                | Error::FitFailed(_)
                | Error::DegenerateCalibration(_)
        )
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
