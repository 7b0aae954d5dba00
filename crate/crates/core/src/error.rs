use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("no positive relevance mass")]
    NoPositiveMass,

    #[error("undefined nDCG: gold labels are all zero")]
    UndefinedNdcg,

    #[error("empty reference")]
    EmptyReference,

    #[error("target contains only PAD tokens")]
    AllPadTarget,

    #[error("non-finite {component} loss")]
    NonFinite { component: &'static str },

    #[error("training diverged at epoch {epoch}; last good checkpoint: {}", last_good.as_ref().map(|p| p.display().to_string()).unwrap_or_else(|| "<none>".to_string()))]
    Diverged {
        epoch: usize,
        last_good: Option<PathBuf>,
    },

    #[error("vocabulary mismatch: {0}")]
    VocabMismatch(String),

    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Errors caused by bad input rather than a failure while running.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Validation(_)
                | Error::Config(_)
                | Error::VocabMismatch(_)
                | Error::Precondition(_)
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
