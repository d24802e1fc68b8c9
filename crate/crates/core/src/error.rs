use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A coefficient constraint such as `2*k2 + k1 < 0` does not hold.
    #[error("constraint violated: {constraint} ({detail})")]
    ConstraintViolation {
        constraint: &'static str,
        detail: String,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unknown problem `{0}` (expected one of: ou, cubic1d, cubic2d)")]
    UnknownProblem(String),

    #[error("non-finite {what} at x = {point:?}")]
    NonFinite { what: &'static str, point: Vec<f64> },

    #[error("implicit solve failed after {iterations} iterations: residual {residual:e} at {last_iterate:?}")]
    SolverFailure {
        last_iterate: Vec<f64>,
        residual: f64,
        iterations: usize,
    },

    #[error("step {step} failed: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("path {path} failed: {source}")]
    Path {
        path: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("empty sample")]
    EmptySample,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("misuse: {0}")]
    Misuse(String),

    #[error("malformed table: {0}")]
    Table(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn at_step(self, step: usize) -> Self {
        Error::Step {
            step,
            source: Box::new(self),
        }
    }

    pub(crate) fn at_path(self, path: usize) -> Self {
        Error::Path {
            path,
            source: Box::new(self),
        }
    }

    /// Step index of the innermost step failure, if any.
    pub fn failed_step(&self) -> Option<usize> {
        match self {
            Error::Step { step, .. } => Some(*step),
            Error::Path { source, .. } => source.failed_step(),
            _ => None,
        }
    }

    /// True when the error came out of the numerical integrator rather than from input validation.
    pub fn is_runtime(&self) -> bool {
        match self {
            Error::SolverFailure { .. } | Error::NonFinite { .. } => true,
            Error::Step { source, .. } | Error::Path { source, .. } => source.is_runtime(),
            _ => false,
        }
    }
}
