use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GmeError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {malformed} of {total} lines malformed (first: line {first_line}: {first_message})")]
    MalformedCorpus {
        path: PathBuf,
        malformed: usize,
        total: usize,
        first_line: usize,
        first_message: String,
    },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("sequence of {len} tokens exceeds context limit {limit}{}", case.as_ref().map(|c| format!(" (case {c})")).unwrap_or_default())]
    Length {
        len: usize,
        limit: usize,
        case: Option<String>,
    },
    #[error("non-finite loss at step {step} in stage {stage}")]
    NonFiniteLoss { stage: String, step: usize },
    #[error("nli backend failed on premise {premise:?} / hypothesis {hypothesis:?}: {message}")]
    NliBackend {
        premise: String,
        hypothesis: String,
        message: String,
    },
    #[error("scorer backend failed: {0}")]
    Scorer(String),
    #[error("serialization error: {0}")]
    Serde(String),
    #[error("misaligned inputs: {0}")]
    Misaligned(String),
}

pub type Result<T, E = GmeError> = std::result::Result<T, E>;

impl GmeError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GmeError::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<serde_json::Error> for GmeError {
    fn from(e: serde_json::Error) -> Self {
        GmeError::Serde(e.to_string())
    }
}
