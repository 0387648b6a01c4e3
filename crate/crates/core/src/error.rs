use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("root finder did not converge after {iterations} iterations (bracket [{lo}, {hi}])")]
    NoConvergence { iterations: usize, lo: f64, hi: f64 },

    #[error("observation out of range: n = {n} with n0 = {n0}")]
    ObservationOutOfRange { n: u32, n0: u32 },

    #[error("design {0} is not in the design grid")]
    DesignOutOfGrid(u32),

    #[error("degenerate update for model {model}: every particle weight underflowed (max log-likelihood {max_log_likelihood})")]
    DegenerateUpdate { model: u8, max_log_likelihood: f64 },

    #[error("matrix is not symmetric positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("Laplace fit failed: {0}")]
    FitFailure(String),

    #[error("unreliable Monte Carlo estimate: {failed} of {total} fits failed")]
    UnreliableEstimate { failed: usize, total: usize },

    #[error("session already holds its {0} planned experiments")]
    SessionComplete(usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),

    #[error("serialization error: {0}")]
    Serialization(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}
