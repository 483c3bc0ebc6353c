//! Error types shared across the toolkit.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller violated an operation precondition (bad shape, out-of-range
    /// parameter, undersized image, ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Tensor dimensions disagree between a header and its payload, or
    /// between two tensors that must match.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A serialized tensor or config could not be parsed.
    #[error("parse error: {0}")]
    Parse(String),

    /// A tensor payload ended before the header-declared length.
    #[error("truncated payload: {0}")]
    Truncated(String),

    /// The payload dtype does not match the declared one.
    #[error("dtype mismatch: expected {expected}, found {found}")]
    DtypeMismatch { expected: String, found: String },

    /// The training loop produced a non-finite loss.
    #[error("training diverged at step {step} (t={t:.4}, tau={tau:.4}): {detail}")]
    TrainingDiverged {
        step: usize,
        t: f64,
        tau: f64,
        detail: String,
    },

    /// The ancestral sampler produced a non-finite value.
    #[error("sampling diverged at step {step}: {detail}")]
    SamplingDiverged { step: usize, detail: String },

    /// A dataset directory yielded no usable images.
    #[error("empty corpus: {0}")]
    EmptyCorpus(String),

    /// An evaluation pair failed; wraps the underlying error with its index.
    #[error("evaluation failed on pair {pair}: {source}")]
    EvalPair {
        pair: usize,
        #[source]
        source: Box<Error>,
    },

    /// A checkpoint was produced by a different model configuration.
    #[error("checkpoint config hash mismatch: expected {expected}, found {found}")]
    ConfigHashMismatch { expected: String, found: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
