use thiserror::Error;

/// Errors raised by model construction, estimators, tests and experiments.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("truncation index {k} outside 1..={n_max}")]
    TruncationOutOfRange { k: usize, n_max: usize },

    #[error("sequence `{name}` has length {got}, expected at least {expected}")]
    LengthMismatch {
        name: &'static str,
        got: usize,
        expected: usize,
    },

    #[error("signal detection requires a zero reference point, but theta_ref[{j}] is nonzero")]
    NonZeroReference { j: usize },

    #[error(
        "goodness-of-fit testing requires every reference coordinate to be nonzero, \
         but theta_ref[{j}] = 0; test the zero coordinates with the signal-detection \
         statistic and combine both tests"
    )]
    ZeroReferenceCoordinate { j: usize },

    #[error("variance at index {index} must be strictly positive")]
    NonPositiveVariance { index: usize },

    #[error("construction leaves the smoothness classes: {0}")]
    Membership(String),

    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
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
