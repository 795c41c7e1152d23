use thiserror::Error;

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("token id {id} out of range for vocabulary of size {vocab}")]
    TokenOutOfRange { id: u32, vocab: usize },
    #[error("{side} sequence {index} has length {len}, exceeding the maximum {max}")]
    TooLong { side: &'static str, index: usize, len: usize, max: usize },
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("non-finite loss at step {step} (batch fingerprint {fingerprint:016x})")]
    NonFiniteLoss { step: u64, fingerprint: u64 },
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("tensor `{name}`: {detail}")]
    Shape { name: String, detail: String },
    #[error("checkpoint is truncated: {0}")]
    Truncated(String),
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
