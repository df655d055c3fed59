use thiserror::Error;

/// Errors raised by the estimators, metrics, model and pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid sample: {0}")]
    InvalidSample(String),

    #[error("sample too small: need at least {required} rows, got {got}")]
    SampleTooSmall { required: usize, got: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("expected at least {required} blocks, got {got}")]
    ArityError { required: usize, got: usize },

    #[error("invalid weight {0}: weights must be finite and non-negative")]
    InvalidWeight(f64),

    #[error("prediction variance {0:e} is too small for the unfairness ratio")]
    DegenerateVariance(f64),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("invalid forecast: {0}")]
    InvalidForecast(String),

    #[error("observed count {observed} exceeds truncation cap {cap}")]
    CapTooSmall { observed: u64, cap: u64 },

    #[error("invalid rate {0}: Poisson means must be positive")]
    InvalidRate(f64),

    #[error("batch of {0} rows is too small for the regulariser (need 4)")]
    BatchTooSmall(usize),

    /// Non-finite loss or gradient. Training attaches the last parameters
    /// that produced a finite validation objective.
    #[error("divergence detected: {reason}")]
    DivergenceDetected {
        reason: String,
        last_good: Option<Box<crate::model::TrainedModel>>,
    },

    #[error("regulariser value {0:e} is too small to anchor a lambda scale")]
    DegenerateRegulariser(f64),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),

    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Format(e.to_string())
    }
}
