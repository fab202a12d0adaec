use thiserror::Error;

pub type Result<T> = std::result::Result<T, SpmlError>;

#[derive(Debug, Error)]
pub enum SpmlError {
    /// Argument outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Invalid hyperparameter or model parameter.
    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("range error: {0}")]
    Range(String),

    /// Dataset violates one of its structural invariants.
    #[error("invalid dataset: {0}")]
    Dataset(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    /// One or more configuration problems, all collected before any work starts.
    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Config(Vec<String>),

    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl SpmlError {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        SpmlError::Config(vec![msg.into()])
    }
}
