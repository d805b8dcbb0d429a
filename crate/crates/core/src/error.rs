use thiserror::Error;

use crate::denoise::Residuals;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("solver did not converge after {iterations} iterations ({residuals})")]
    NonConvergence {
        iterations: usize,
        residuals: Residuals,
    },

    #[error("dual infeasible at row {index}: |q| exceeds alpha by {excess:.3e}")]
    InfeasibleDual { index: usize, excess: f64 },

    #[error("singular system: {0}")]
    SingularSystem(String),

    #[error("assumption violated: {0}")]
    AssumptionViolated(String),

    #[error("trust region stopped after {iterations} iterations without reaching the terminal radius")]
    MaxIterations {
        iterations: usize,
        /// Last iterate and the full trace.
        partial: Box<crate::trust_region::TrustRegionResult>,
    },

    #[error("training pair {index}: {source}")]
    Pair {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),

    #[error("corrupt file: {0}")]
    CorruptFile(String),

    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Strips `Pair` wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Pair { source, .. } => source.root(),
            other => other,
        }
    }

    pub fn is_numerical(&self) -> bool {
        matches!(
            self.root(),
            Error::NonConvergence { .. }
                | Error::InfeasibleDual { .. }
                | Error::SingularSystem(_)
                | Error::AssumptionViolated(_)
                | Error::MaxIterations { .. }
        )
    }

    pub fn is_io(&self) -> bool {
        matches!(
            self.root(),
            Error::Io(_) | Error::UnsupportedFormat(_) | Error::CorruptFile(_)
        )
    }

    /// Tags the error with the index of the training pair it came from.
    pub fn in_pair(self, index: usize) -> Error {
        Error::Pair {
            index,
            source: Box::new(self),
        }
    }
}
