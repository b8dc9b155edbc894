use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The SPD solve hit its iteration cap. `best` is the last iterate.
    #[error("linear solve did not converge after {iterations} iterations (relative residual {relative_residual:e})")]
    NotConverged {
        iterations: usize,
        relative_residual: f64,
        best: Vec<f64>,
    },

    #[error("assumption violated: {0}")]
    AssumptionViolated(String),

    #[error("multiplier search stagnated at lambda = {lambda:e} (derivative {derivative:e})")]
    Stagnation { lambda: f64, derivative: f64 },

    #[error("multiplier search exceeded {cap} inner iterations (last lambda = {lambda:e}, G = {g_value:e}, target = [{lower:e}, {upper:e}])")]
    InnerCapExceeded {
        cap: usize,
        lambda: f64,
        g_value: f64,
        lower: f64,
        upper: f64,
    },

    #[error("malformed input: {0}")]
    Malformed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
