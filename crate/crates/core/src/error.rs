use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Malformed arguments: dimension mismatch, non-permutation, bad lengths.
    #[error("input error: {0}")]
    Input(String),
    /// Job, layout or plan settings that cannot be honored.
    #[error("config error: {0}")]
    Config(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    /// Executors disagree on state that must be bitwise identical.
    #[error("corruption: {0}")]
    Corruption(String),
    /// Operation called at the wrong point of the mini-batch lifecycle.
    #[error("state error: {0}")]
    State(String),
    #[error("checkpoint format error at byte {offset}: {msg}")]
    Format { offset: usize, msg: String },
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("progress error: {0}")]
    Progress(String),
    #[error("constraint violated: {0}")]
    Constraint(String),
}
