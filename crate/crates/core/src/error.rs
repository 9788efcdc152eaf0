use std::path::PathBuf;

use did_tensor::TensorError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, DidError>;

#[derive(Debug, Error)]
pub enum DidError {
    /// Input data violates an operation's precondition (too short, empty, ...).
    #[error("input error: {0}")]
    Input(String),
    #[error("config error: {0}")]
    Config(String),
    /// Feature or parameter dimensions disagree with the model configuration.
    #[error("dimension error: {0}")]
    Dimension(String),
    /// A file or manifest is syntactically malformed.
    #[error("format error: {0}")]
    Format(String),
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

impl DidError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DidError::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable category name.
    pub fn kind(&self) -> &'static str {
        match self {
            DidError::Input(_) => "input",
            DidError::Config(_) => "config",
            DidError::Dimension(_) => "dimension",
            DidError::Format(_) => "format",
            DidError::Alignment(_) => "alignment",
            DidError::Contract(_) => "contract",
            DidError::Numeric(_) => "numeric",
            DidError::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
                "missing-file"
            }
            DidError::Io { .. } => "io",
            DidError::Tensor(TensorError::Shape { .. }) => "dimension",
            DidError::Tensor(TensorError::Numeric { .. }) => "numeric",
            DidError::Tensor(TensorError::Format(_)) => "format",
            DidError::Tensor(_) => "contract",
        }
    }
}
