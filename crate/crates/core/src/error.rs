use std::path::PathBuf;

/// Errors produced anywhere in the decoding pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("truncated payload: expected {expected} values, found {found}")]
    Truncation { expected: usize, found: usize },

    #[error("data error: {0}")]
    Data(String),

    #[error("unknown phoneme {symbol:?} at line {line}")]
    Vocabulary { symbol: String, line: usize },

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("index out of bounds: {0}")]
    Bounds(String),

    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    Definiteness { pivot: usize, value: f64 },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("infeasible alignment: {frames} frames cannot emit {labels} labels (need {required})")]
    InfeasibleAlignment {
        frames: usize,
        labels: usize,
        required: usize,
    },

    #[error("segment too short: {samples} samples, window needs {window}")]
    TooShort { samples: usize, window: usize },

    #[error("non-finite loss on sentence {0}")]
    NonFiniteLoss(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad input data rather than bad usage.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::Parameter(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
