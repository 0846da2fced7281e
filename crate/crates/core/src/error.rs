use thiserror::Error;

/// Errors produced by model construction, inference, training and I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("structural error: {0}")]
    Structural(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("empty instance: {0}")]
    EmptyInstance(String),

    #[error("unsupported structure: {0}")]
    UnsupportedStructure(String),

    #[error("degenerate gold marginal at node {node}: p = {prob}")]
    DegenerateGamma { node: usize, prob: f64 },

    #[error("enumeration refused: {sequences} label sequences exceeds the cap of {cap}")]
    TooLarge { sequences: f64, cap: f64 },

    #[error("optimization failed at iteration {iteration}: {message}")]
    Optimization { iteration: usize, message: String },

    #[error("format error at line {line}: {message}")]
    Format { line: usize, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("artifact version mismatch: expected {expected}, found {found}")]
    Version { expected: u32, found: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn structural(msg: impl Into<String>) -> Self {
        Error::Structural(msg.into())
    }

    pub(crate) fn format(line: usize, msg: impl Into<String>) -> Self {
        Error::Format {
            line,
            message: msg.into(),
        }
    }

    /// Whether the error stems from bad input data rather than a usage or internal problem.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Format { .. } | Error::Io(_) | Error::Json(_) | Error::Version { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
