use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An eigenphase sits on (or within tolerance of) the principal branch cut at π.
    #[error("branch ambiguity: eigenphase {phase} lies within {tol:e} of the branch cut")]
    BranchAmbiguity { phase: f64, tol: f64 },

    #[error("integration failed at t = {t_reached}: {reason}")]
    Integration { t_reached: f64, reason: String },

    #[error("internal consistency check failed: {0}")]
    InternalConsistency(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for failures that come from the numerics rather than from the caller's input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::BranchAmbiguity { .. } | Error::Integration { .. } | Error::InternalConsistency(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
