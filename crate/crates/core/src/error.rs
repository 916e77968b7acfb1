use thiserror::Error;

pub type Result<T> = std::result::Result<T, SigError>;

#[derive(Debug, Error)]
pub enum SigError {
    #[error("channel count must be at least 1")]
    ZeroChannels,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("stream of length {len} is too short: {needed}")]
    StreamTooShort { len: usize, needed: String },

    #[error("invalid depth {0}: signatures need depth >= 1")]
    InvalidDepth(usize),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("cholesky factorization failed: {0}")]
    Cholesky(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("model chain broken at block {block}: {msg}")]
    ModelChain { block: usize, msg: String },

    #[error("gradient check failed: {0}")]
    GradientCheck(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl SigError {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        SigError::ShapeMismatch(msg.into())
    }
}
