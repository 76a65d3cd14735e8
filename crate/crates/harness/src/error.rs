use thiserror::Error;

pub type Result<T> = std::result::Result<T, HarnessError>;

#[derive(Debug, Error)]
pub enum HarnessError {
    /// Bad or inconsistent configuration; maps to exit code 2.
    #[error("config error: {0}")]
    Config(String),

    #[error("arm {arm}, seed {seed}: {source}")]
    Run {
        arm: String,
        seed: u64,
        #[source]
        source: fgl_core::Error,
    },

    #[error(transparent)]
    Core(#[from] fgl_core::Error),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            _ => 3,
        }
    }
}
