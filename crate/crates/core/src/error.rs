use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid mixture state: {0}")]
    InvalidState(String),

    #[error("point lies outside the support of the model: {0}")]
    OutsideSupport(String),

    #[error("ODE integration failed: {0}")]
    Integration(String),

    #[error("unsupported operation: {0}")]
    Unsupported(&'static str),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("infeasible starting point: {0}")]
    Infeasible(String),

    #[error("all {0} restarts produced a non-finite objective")]
    AllRestartsDiverged(usize),

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
