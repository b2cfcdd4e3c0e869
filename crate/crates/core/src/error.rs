use thiserror::Error;

/// Errors raised by model construction and the numerical routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("detailed balance violated at ({x}, {y}): relative residual {residual:e}")]
    DetailedBalanceViolation { x: usize, y: usize, residual: f64 },

    #[error("jump graph is not irreducible: state {unreachable} cannot be reached from state 0")]
    NotIrreducible { unreachable: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("operator is singular: {0}")]
    SingularOperator(String),

    #[error("model is not transient: {0}")]
    NotTransient(String),

    #[error("symmetric eigensolver did not converge")]
    EigenFailure,

    #[error("p-norm power iteration did not converge for p = {p} after {iterations} iterations")]
    PowerIterationDivergence { p: f64, iterations: usize },

    #[error("p-norm {value:e} exceeds the Riesz-Thorin bound {bound:e} for p = {p}")]
    InterpolationBracketViolation { p: f64, value: f64, bound: f64 },

    #[error("criterion not applicable: {0}")]
    NotApplicable(String),

    #[error("outside the validity window: {0}")]
    WindowViolation(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
