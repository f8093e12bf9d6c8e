use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument is outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Malformed CSV input; `row` counts data rows from 1.
    #[error("parse error at row {row}: {msg}")]
    Parse { row: usize, msg: String },

    #[error("no samples")]
    NoSamples,

    #[error("insufficient quadratic variation: have {available}, need {required}")]
    InsufficientQuadraticVariation { available: f64, required: f64 },

    #[error("insufficient resolution: {0}")]
    InsufficientResolution(String),

    /// A strategy broke its declared contract (bet bound, positivity, event cap).
    #[error("strategy fault: {0}")]
    StrategyFault(String),

    #[error("path lacks quadratic variation horizon: a_end={a_end}, S={horizon}")]
    MissingQuadraticVariationHorizon { a_end: f64, horizon: f64 },

    /// Witness certificate failed on the named ensemble member.
    #[error("witness failed on path {path_id}: running max of capital {max_capital} < 1")]
    WitnessFailed { path_id: usize, max_capital: f64 },

    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
