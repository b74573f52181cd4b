use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("axis {axis} out of range for rank {rank}")]
    InvalidAxis { axis: usize, rank: usize },
    #[error("target index {index} out of vocabulary of size {vocab}")]
    TargetOutOfRange { index: usize, vocab: usize },
    #[error("loss must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("tape has already been consumed by a backward pass")]
    GraphConsumed,
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("duplicate parameter `{0}`")]
    DuplicateParameter(String),
    #[error("missing gradient for parameter `{0}`")]
    MissingGradient(String),
    #[error("model function is not deterministic (f(x) changed from {first} to {second})")]
    NonDeterministic { first: f64, second: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("checkpoint format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = NumericsError> = std::result::Result<T, E>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> NumericsError {
    NumericsError::Shape { op, detail: detail.into() }
}
