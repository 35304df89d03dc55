use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("lattice of {points} points exceeds the memory budget of {budget}")]
    MemoryBudget { points: u128, budget: usize },

    #[error("integrand is not adapted to the driving noise")]
    NotAdapted,

    #[error("solution blew up at time step {step} (|u| = {magnitude:e})")]
    Blowup { step: usize, magnitude: f64 },

    #[error("{0}")]
    Regime(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("malformed binary stream: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

pub(crate) fn require(cond: bool, name: &'static str, reason: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(invalid(name, reason))
    }
}
