use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("no statements found in {0}")]
    NoStatements(PathBuf),
    #[error("unknown split file {0} (expected train, valid or test)")]
    UnknownSplitFile(PathBuf),
    #[error("unknown dataset format '{0}' (expected jsonl-statements or tsv-flat)")]
    UnknownFormat(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("statement {statement} flattens to {len} tokens but the model accepts at most {max}")]
    SequenceTooLong {
        statement: String,
        len: usize,
        max: usize,
    },
    #[error("{kind} id {id} is outside the vocabulary of size {size}")]
    OutOfVocabulary {
        kind: &'static str,
        id: usize,
        size: usize,
    },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("split '{0}' has no statements")]
    EmptySplit(String),
    #[error("loss diverged at step {step} (epoch {epoch}): {detail}")]
    Divergence {
        step: u64,
        epoch: u64,
        detail: String,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("vocabulary mismatch: {0}")]
    VocabularyMismatch(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
