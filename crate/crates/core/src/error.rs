use thiserror::Error;

/// Errors raised by the inference pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid depth range [{d_min}, {d_max}]: depths must be finite, positive and ordered")]
    InvalidRange { d_min: f64, d_max: f64 },

    #[error("invalid camera: {0}")]
    InvalidCamera(String),

    #[error("dimension mismatch in {context}: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        context: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed {format} data: {message}")]
    Format { format: &'static str, message: String },

    #[error("weight store: {0}")]
    Weights(String),

    #[error("layer {layer}: {message}")]
    Layer { layer: String, message: String },

    #[error("invalid scene: {0}")]
    Scene(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("iteration {iteration}, source {source_index}: {inner}")]
    Oracle {
        iteration: usize,
        source_index: usize,
        #[source]
        inner: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn format(format: &'static str, message: impl Into<String>) -> Self {
        Error::Format {
            format,
            message: message.into(),
        }
    }

    pub(crate) fn mismatch(context: impl Into<String>, expected: &[usize], actual: &[usize]) -> Self {
        Error::DimensionMismatch {
            context: context.into(),
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
