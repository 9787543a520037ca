use thiserror::Error;

/// Errors raised by the numerical routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid exponent {0}: exponents must lie in [1, inf]")]
    InvalidExponent(String),
    #[error("invalid exponent pair (p, q) = ({p}, {q}): {reason}")]
    InvalidPair { p: String, q: String, reason: String },
    #[error("time ordering violated: {0}")]
    Order(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("unstable bundle solve is rank deficient at t = {t}: sigma_min = {sigma_min:e}")]
    SingularBundle { t: f64, sigma_min: f64 },
    #[error("singular linear system: {0}")]
    Singular(String),
    #[error("propagator overflow on window: {0}")]
    WindowTooLarge(String),
    #[error("excluded exponent pair (p, q) = (inf, 1): reconstruction unavailable")]
    ExcludedPair,
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("certification failed: {0}")]
    Certification(String),
    #[error("convergence failure: {0}")]
    Convergence(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
