use thiserror::Error;

/// Crate-wide error type. Numeric kernels, data loaders, oracles and the
/// extraction drivers all speak this so callers only juggle one `Result`.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch, left is {}x{}, right is {}x{}", left.0, left.1, right.0, right.1)]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("data format error: {0}")]
    DataFormat(String),

    #[error("query budget exhausted (budget {budget})")]
    BudgetExhausted { budget: u64 },

    /// Raised when an analysis needs per-timestep outputs but the oracle
    /// only exposes its final timestep.
    #[error("insufficient observability: {0}")]
    InsufficientObservability(&'static str),

    #[error("zero variance in target column {feature}; r2 is undefined")]
    ZeroVariance { feature: usize },

    #[error("protocol error: {0}")]
    Protocol(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::DataFormat(msg.into())
    }
}
