use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad invocation; exit code 1.
    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] segrank::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("{path}: {detail}")]
    Data { path: PathBuf, detail: String },

    #[error(transparent)]
    Csv(#[from] csv::Error),

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

    pub fn data(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        CliError::Data {
            path: path.into(),
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
