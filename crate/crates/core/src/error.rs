use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    /// Invalid parameters or incompatible inputs.
    #[error("configuration error: {0}")]
    Config(String),

    /// CFL or explicit-stepping stability guard violated.
    #[error("stability guard violated: {0}")]
    Stability(String),

    #[error("admissibility error: {0}")]
    Admissibility(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for the errors raised by time-step guards.
    pub fn is_stability(&self) -> bool {
        matches!(self, Error::Stability(_))
    }
}
