use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("input {point:?} lies outside the design space")]
    Domain { point: Vec<i64> },

    #[error("covariance matrix is not positive definite for length-scales {lengths:?}")]
    Singular { lengths: Vec<f64> },

    #[error("gaussian process fit failed: {0}")]
    Fit(String),

    #[error("coefficient model {index}: {source}")]
    Coefficient {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("negative coefficient {value} at index {index}")]
    Constraint { index: usize, value: f64 },

    #[error("unsupported transform mode: {0}")]
    UnsupportedMode(String),

    #[error("degenerate evaluation: {0}")]
    Degenerate(String),

    #[error("study set exhausted: every candidate is already in the design")]
    Exhausted,

    #[error("simulator failure: {0}")]
    Simulator(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerical machinery, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Singular { .. } | Error::Fit(_) | Error::Degenerate(_) => true,
            Error::Coefficient { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
