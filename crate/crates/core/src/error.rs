use thiserror::Error;

#[derive(Debug, Error)]
pub enum DsfError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("outside domain: {0}")]
    Domain(String),

    #[error("flanking path not found within margin {margin} at ({x}, {t}); enlarge the margin")]
    MarginExhausted { x: f64, t: f64, margin: f64 },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl DsfError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Self::InvalidInput(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, DsfError>;
