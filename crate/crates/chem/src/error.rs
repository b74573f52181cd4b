use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ChemError {
    #[error("unknown token `{0}`")]
    UnknownToken(String),
    #[error("unbalanced brackets at byte {0}")]
    UnbalancedBrackets(usize),
    #[error("unexpected character `{ch}` at byte {pos}")]
    UnexpectedChar { ch: char, pos: usize },
    #[error("graph is not expressible in the dialect: {0}")]
    Inexpressible(String),
    #[error("graph is disconnected")]
    Disconnected,
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("duplicate token `{0}`")]
    DuplicateToken(String),
    #[error("fingerprint widths differ: {0} vs {1}")]
    WidthMismatch(usize, usize),
    #[error("vocabulary format: {0}")]
    VocabFormat(String),
    #[error("graph json: {0}")]
    Json(String),
}

pub type Result<T, E = ChemError> = std::result::Result<T, E>;
