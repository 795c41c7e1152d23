use thiserror::Error;

pub type Result<T> = std::result::Result<T, HarnessError>;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] punner_core::Error),
    #[error(transparent)]
    Model(#[from] punner_model::ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("invalid plan: {0}")]
    Plan(String),
    #[error("no adaptation checkpoint was kept for step {0}")]
    MissingCheckpoint(u64),
    #[error("{0}")]
    Input(String),
}

impl HarnessError {
    pub(crate) fn plan(msg: impl Into<String>) -> Self {
        HarnessError::Plan(msg.into())
    }
}
