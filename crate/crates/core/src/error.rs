use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{what} = {value} is outside the valid domain {domain}")]
    Domain {
        what: &'static str,
        value: f64,
        domain: String,
    },

    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("posterior is singular at sigma2 = 0 unless x coincides with a data point")]
    SingularPosterior,

    #[error("parse error at row {row}: {reason}")]
    Parse { row: usize, reason: String },

    #[error("candidate denoiser returned a non-finite value at x = {x:?}")]
    NonFiniteCandidate { x: Vec<f64> },

    #[error("integration blew up at step {step} (t = {t})")]
    BlowUp { step: usize, t: f64 },

    #[error("no convergence after {iterations} iterations (last residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("grid too coarse to separate branch children near sigma2 = {sigma2}; try n_grid >= {suggested_n_grid}")]
    GridTooCoarse { sigma2: f64, suggested_n_grid: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("game inconsistency at step {step}: no element matches the answers so far")]
    Inconsistent { step: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            reason: reason.into(),
        }
    }
}
