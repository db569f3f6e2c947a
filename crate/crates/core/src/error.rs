use ldg_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("config key `{key}`: {msg}")]
    Config { key: String, msg: String },
    #[error("{0}")]
    Contract(String),
}

impl ModelError {
    pub fn config(key: &str, msg: impl Into<String>) -> Self {
        ModelError::Config {
            key: key.to_string(),
            msg: msg.into(),
        }
    }
}

pub type Result<V, E = ModelError> = std::result::Result<V, E>;
