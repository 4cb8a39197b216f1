use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("vocabulary is empty after applying min_count={0}")]
    EmptyVocabulary(usize),

    #[error("document is empty after vocabulary filtering")]
    EmptyDocument,

    #[error("document vector has zero norm")]
    ZeroNorm,

    #[error("training diverged: {component} loss became non-finite at epoch {epoch}")]
    Divergence { component: &'static str, epoch: usize },

    #[error("class {0} received no probability mass in any row, and a row has no remaining mass")]
    VanishingTarget(usize),

    #[error("length mismatch: {0} predictions vs {1} gold labels")]
    LengthMismatch(usize, usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("corrupt model file: {0}")]
    Format(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
