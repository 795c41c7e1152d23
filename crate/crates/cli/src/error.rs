use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad arguments or configuration; exit code 1.
    #[error("{0}")]
    Usage(String),
    /// The command ran but could not produce a result.
    #[error("{0}")]
    Runtime(String),
    #[error(transparent)]
    Harness(#[from] punner_harness::HarnessError),
    #[error(transparent)]
    Core(#[from] punner_core::Error),
    #[error(transparent)]
    Model(#[from] punner_model::ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
