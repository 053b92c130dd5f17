use thiserror::Error;

/// Everything the library can refuse to do.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid specification: {0}")]
    InvalidSpec(String),
    #[error("terminal value x_T = {0} sits on the boundary of D")]
    UnsupportedBoundaryPin(f64),
    #[error("not applicable: {0}")]
    NotApplicable(String),
    #[error("point is not strongly regular ({0})")]
    NotStronglyRegular(String),
    #[error("expansion order {0} is not supported (max 2)")]
    UnsupportedOrder(usize),
    #[error("asymptotic series does not hold here: {0}")]
    SeriesInvalidHere(String),
    #[error("numerical blow-up: {0}")]
    NumericalBlowup(String),
    #[error("bad configuration: {0}")]
    Config(String),
    #[error("only {got} of {needed} required exits observed")]
    InsufficientExits { got: u64, needed: u64 },
}

pub type Result<T> = std::result::Result<T, Error>;
