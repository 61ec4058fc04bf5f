use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },

    #[error("unknown identifier '{name}' at offset {offset}")]
    UnknownIdentifier { name: String, offset: usize },

    #[error("exponent at offset {offset} is not an integer")]
    NonIntegerExponent { offset: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("expression uses x{var} but only {dim} coordinates are available")]
    VariableOutOfRange { var: usize, dim: usize },

    #[error("point {point:?} lies within the guard radius of the excluded set ({note})")]
    Excluded { point: Vec<f64>, note: String },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("step {step} does not divide duration {duration}")]
    StepMismatch { step: f64, duration: f64 },

    #[error("unsupported system variant: {0}")]
    UnsupportedVariant(String),

    #[error("no amplitude bracket found up to cap {cap}: {diagnostic}")]
    NoBracket { cap: f64, diagnostic: String },

    #[error("shooting failed to converge (best residual {best_residual:e})")]
    NoConvergence { best_residual: f64 },

    #[error("conservation violated: {quantity} spread {spread:e} exceeds {limit:e}")]
    ConservationViolated { quantity: String, spread: f64, limit: f64 },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
