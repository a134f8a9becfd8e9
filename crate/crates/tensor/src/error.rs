use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("backward requires a scalar output, got shape {0:?}")]
    NonScalarBackward(Vec<usize>),

    #[error("backward already ran on this tape; build a new tape")]
    BackwardTwice,

    #[error("non-finite value at coordinate {coordinate}: {detail}")]
    NonFinite { coordinate: usize, detail: String },

    #[error("function is not smooth at coordinate {coordinate} (one-sided slopes {forward} vs {backward})")]
    NonSmooth {
        coordinate: usize,
        forward: f64,
        backward: f64,
    },

    #[error("invalid argument: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

pub(crate) fn shape_err<T>(op: &'static str, detail: impl Into<String>) -> Result<T> {
    Err(TensorError::ShapeMismatch {
        op,
        detail: detail.into(),
    })
}
