use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A numeric input was NaN or infinite.
    #[error("non-finite value for `{0}`")]
    NonFinite(&'static str),

    #[error("degenerate measurement interval: x_now == x_prev")]
    DegenerateInterval,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid topology: {0}")]
    InvalidTopology(String),

    #[error("disconnected graph: {0}")]
    Disconnected(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("eigenvalue iteration did not converge")]
    NoConvergence,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("condition (ii) violated: {0}")]
    ConditionViolation(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn ensure_finite(name: &'static str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(name))
    }
}
