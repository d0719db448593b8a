use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("singular matrix: column {column} has max pivot magnitude {pivot:e}")]
    SingularMatrix { column: usize, pivot: f64 },

    #[error("state left the chart domain: |coords|^2 = {radius_sq} exceeds {limit}")]
    ChartDomainViolation { radius_sq: f64, limit: f64 },

    #[error("projection onto the manifold did not converge in {iterations} iterations (|g| = {residual:e})")]
    ProjectionDivergence { iterations: usize, residual: f64 },

    #[error(
        "implicit one-step solve did not converge in {iterations} iterations (update {update:e})"
    )]
    ImplicitStepDivergence { iterations: usize, update: f64 },

    #[error("initialization failed after {iterations} iterations: |F| = {residual:e}")]
    InitializationFailure {
        iterations: usize,
        residual: f64,
        /// Accepted step lengths, one per Newton iteration.
        damping: Vec<f64>,
    },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("I/O error on {path}: {message}")]
    Io { path: String, message: String },
}

impl Error {
    pub(crate) fn dims(context: &'static str, expected: usize, found: usize) -> Self {
        Error::DimensionMismatch {
            context,
            expected,
            found,
        }
    }
}

pub(crate) fn check_len(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::dims(context, expected, found))
    }
}
