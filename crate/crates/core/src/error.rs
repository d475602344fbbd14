use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("atoms {i} and {j} are {distance:.4} µm apart, below the minimum separation {min:.4} µm")]
    SeparationViolation {
        i: usize,
        j: usize,
        distance: f64,
        min: f64,
    },

    #[error("no C6 coefficient for the pair {0} / {1}")]
    MissingC6(String, String),

    #[error("pulse-area solve did not converge (residual {residual:e})")]
    AreaSolve { residual: f64 },

    #[error("integration became unstable at t = {time:.6} µs (squared norm {norm_sqr})")]
    IntegrationUnstable { time: f64, norm_sqr: f64 },

    #[error("count distribution is not normalized: total mass {total}")]
    Normalization { total: f64 },

    #[error("excitation distributions are identical; classification is meaningless")]
    DegenerateHypotheses,

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
