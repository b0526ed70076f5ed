use thiserror::Error;

#[derive(Debug, Error)]
pub enum KgzError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("field length {found} does not match grid with {expected} points")]
    GridMismatch { expected: usize, found: usize },

    #[error("field mean {mean:e} exceeds zero-mean tolerance {tol:e}")]
    MeanNotZero { mean: f64, tol: f64 },

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("frequency {0} outside the admissible range")]
    FrequencyOutOfRange(f64),

    #[error("eigensolve failed: {0}")]
    EigensolveFailure(String),

    #[error("solution blew up at t = {t} (max field magnitude {magnitude:e})")]
    BlowUp { t: f64, magnitude: f64 },

    #[error("cutoff radius {radius} does not fit in half-box {half_length}")]
    CutoffTooLarge { radius: f64, half_length: f64 },

    #[error("time window has {len} samples, need at least {min}")]
    WindowTooShort { len: usize, min: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = KgzError> = std::result::Result<T, E>;
