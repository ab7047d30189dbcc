use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("input shape mismatch: model expects {expected:?}, image is {got:?}")]
    ShapeMismatch {
        expected: [usize; 3],
        got: [usize; 3],
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("functional is not differentiable: {0}")]
    UnsupportedFunctional(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("double differentiation self-check failed: {0}")]
    Capability(String),

    #[error("model file error: {0}")]
    Persistence(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;
