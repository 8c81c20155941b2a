use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// The first argument puts mass where the second has none, so the
    /// divergence is infinite.
    #[error("absolute continuity violated at index {index}")]
    NotAbsolutelyContinuous { index: usize },

    #[error("distributions are mutually singular")]
    MutuallySingular,

    #[error("matrix is not symmetric positive definite")]
    NotPositiveDefinite,

    #[error("linear system is singular")]
    SingularSystem,

    #[error("no closed form for {0}")]
    NoClosedForm(String),

    #[error("all importance weights underflowed to zero")]
    WeightUnderflow,

    #[error("enumeration budget exceeded: {required} > {budget}")]
    BudgetExceeded { required: f64, budget: f64 },

    #[error("infinite KL divergence to the prior")]
    InfiniteKl,

    #[error("invalid input data: {0}")]
    InvalidData(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
