use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("capacity exceeded: {requested} elements requested, cap is {cap}")]
    Capacity { requested: u128, cap: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("factor {factor}: {reason}")]
    InvalidFactor { factor: usize, reason: String },

    #[error("degenerate distribution: total mass Z = 0")]
    ZeroMass,

    #[error("zero message from {from} to {to}")]
    ZeroMessage { from: String, to: String },

    #[error("non-finite value at iteration {iteration}: {context}")]
    NonFinite { iteration: usize, context: String },

    #[error("unmapped parameter slot `{0}`")]
    UnmappedSlot(String),

    #[error("format error: {0}")]
    Format(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}
