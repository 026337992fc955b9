use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid UTF-8 at byte offset {offset}")]
    InvalidUtf8 { offset: u64 },
    #[error("vocabulary: {0}")]
    Vocab(String),
    #[error("vocab_size {requested} is too small; the minimum feasible size is {minimum}")]
    VocabTooSmall { requested: usize, minimum: usize },
    #[error("no characters observed in the training corpus")]
    EmptyCorpus,
    #[error("token id {id} out of range for vocabulary of size {size}")]
    IdOutOfRange { id: u32, size: usize },
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("invalid input features: {0}")]
    Features(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("schedule: {0}")]
    Schedule(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("example file: {0}")]
    ExampleFormat(String),
    #[error("task: {0}")]
    Task(String),
    #[error("metric: {0}")]
    Metric(String),
    #[error("worker {worker} failed at step {step}: {reason}")]
    WorkerFailed { worker: usize, step: u64, reason: String },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
