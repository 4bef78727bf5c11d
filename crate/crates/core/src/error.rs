use thiserror::Error;

use crate::smc::RunTrace;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("conjugate gradient did not converge after {iterations} iterations (relative residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("all weights are zero or non-finite")]
    DegenerateWeights,

    #[error(
        "quadrature did not reach tolerance {tolerance:e} (estimate {estimate}, error {error:e})"
    )]
    Quadrature {
        tolerance: f64,
        estimate: f64,
        error: f64,
    },

    #[error("tempering stagnated: temperature increments below {floor:e} for {rounds} consecutive rounds at phi = {phi}")]
    Stagnation {
        floor: f64,
        rounds: usize,
        phi: f64,
        trace: Box<RunTrace>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed csv {path}: {message}")]
    Csv { path: String, message: String },
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonConvergence { .. }
                | Error::DegenerateWeights
                | Error::Quadrature { .. }
                | Error::Stagnation { .. }
        )
    }
}
