use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    MalformedLine {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{0}: corpus file contains no records")]
    EmptyCorpus(PathBuf),

    #[error("duplicate record id `{0}`")]
    DuplicateId(String),

    #[error(
        "corpus too short: all {dropped} records fell below the prompt/completion length minima"
    )]
    CorpusTooShort { dropped: usize },

    #[error("insufficient pairs: {required} required, {available} available")]
    InsufficientPairs { required: usize, available: usize },

    #[error("empty prompt")]
    EmptyPrompt,

    #[error("transport error: {0}")]
    Transport(String),

    #[error("protocol violation: {0}")]
    ProtocolViolation(String),

    #[error("endpoint returned {status}: {message}")]
    Endpoint { status: u16, message: String },

    #[error("unknown fine-tune job `{0}`")]
    UnknownJob(String),

    #[error("unknown model `{0}`")]
    UnknownModel(String),

    #[error("fine-tune job {job_id} failed: {diagnostics}")]
    FineTuneFailed { job_id: String, diagnostics: String },

    #[error("invalid job transition for {job_id}: {message}")]
    JobRegression { job_id: String, message: String },

    #[error("statistical test requires non-empty samples")]
    EmptySample,

    #[error("too many dropped samples in {dataset}: {dropped} of {total} exceeds the {max_fraction} tolerance")]
    TooManyDrops {
        dataset: String,
        dropped: usize,
        total: usize,
        max_fraction: f64,
    },

    #[error("evaluation needs at least one outcome of each label")]
    SingleClass,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Errors worth another attempt under the retry policy.
    pub fn is_retryable(&self) -> bool {
        match self {
            Error::Transport(_) => true,
            Error::Endpoint { status, .. } => *status >= 500 || *status == 429,
            _ => false,
        }
    }
}
