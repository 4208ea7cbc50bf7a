use corefbridge::embeddings::EmbeddingError;
use corefbridge::training::{TrainError, WeightsError};
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;
pub const EXIT_VERSION: i32 = 5;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("document {doc}: {source}")]
    Embedding {
        doc: String,
        #[source]
        source: EmbeddingError,
    },
    #[error("numeric abort: {0}")]
    Numeric(String),
    #[error("gradient check failed: max relative error {max_rel_error:e} at {coordinate}")]
    GradCheck {
        max_rel_error: f64,
        coordinate: String,
    },
    #[error("{path}: {source}")]
    Weights {
        path: String,
        #[source]
        source: WeightsError,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Data(_) | CliError::Embedding { .. } | CliError::Io { .. } => EXIT_DATA,
            CliError::Numeric(_) | CliError::GradCheck { .. } => EXIT_NUMERIC,
            CliError::Weights { source, .. } => match source {
                WeightsError::VersionMismatch { .. } => EXIT_VERSION,
                _ => EXIT_DATA,
            },
        }
    }

    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// Attaches the document an error came from, where it matters.
    pub fn from_train(doc: Option<&str>, err: TrainError) -> Self {
        match err {
            TrainError::Embedding(source) => CliError::Embedding {
                doc: doc.unwrap_or("?").to_string(),
                source,
            },
            TrainError::NonFiniteGradient { .. } => CliError::Numeric(err.to_string()),
            TrainError::InvalidConfig(_) | TrainError::Attention(_) => {
                CliError::Config(err.to_string())
            }
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(err: TrainError) -> Self {
        CliError::from_train(None, err)
    }
}
