use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("config parse error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Solver(#[from] grampa::Error),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

pub(crate) fn config_error(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}
