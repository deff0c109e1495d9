use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: String,
        expected: usize,
        got: usize,
    },

    #[error("index out of range in {what}: {index} >= {bound}")]
    IndexOutOfRange {
        what: String,
        index: usize,
        bound: usize,
    },

    #[error("invalid probability row at {location}: {reason}")]
    InvalidDistribution { location: String, reason: String },

    #[error("value out of bounds at {location}: {value} not in [{lo}, {hi}]")]
    OutOfBounds {
        location: String,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("enumeration infeasible: {count} trajectories exceeds cap {cap}")]
    EnumerationInfeasible { count: f64, cap: usize },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dims(what: impl Into<String>, expected: usize, got: usize) -> Self {
        Error::DimensionMismatch {
            what: what.into(),
            expected,
            got,
        }
    }

    pub(crate) fn index(what: impl Into<String>, index: usize, bound: usize) -> Self {
        Error::IndexOutOfRange {
            what: what.into(),
            index,
            bound,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(err: serde_json::Error) -> Self {
        Error::Parse(err.to_string())
    }
}
