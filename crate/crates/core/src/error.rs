use moldiff_chem::ChemError;
use moldiff_numerics::NumericsError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Chem(#[from] ChemError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("config: {0}")]
    Config(String),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("sequence of {len} tokens exceeds the context of {max}")]
    ContextOverflow { len: usize, max: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no masked positions")]
    EmptyMask,
    #[error("missing prerequisite: {0}")]
    MissingPrerequisite(String),
    #[error("frozen parameters changed during stage {0}")]
    FreezeViolation(String),
    #[error("format: {0}")]
    Format(String),
}

pub type Result<T, E = CoreError> = std::result::Result<T, E>;

/// Lets model code run inside numerics callbacks such as gradient checks.
impl From<CoreError> for NumericsError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Numerics(e) => e,
            other => NumericsError::InvalidArgument(other.to_string()),
        }
    }
}
