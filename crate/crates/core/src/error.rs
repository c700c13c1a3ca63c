use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] rtsdoa_autograd::Error),
    #[error(transparent)]
    Acoustics(#[from] rtsdoa_acoustics::Error),
    #[error("config: {0}")]
    Config(String),
    #[error("model: {0}")]
    Model(String),
    #[error("dataset: {0}")]
    Data(String),
    #[error("metrics: {0}")]
    Metrics(String),
    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("checkpoint does not match config: {0}")]
    CheckpointMismatch(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
