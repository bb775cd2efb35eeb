use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        found: usize,
    },

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("train and test corpora share no workers")]
    NoSharedWorkers,

    #[error("worker {worker} has {count} record(s); a stratified split needs at least 2")]
    Stratification { worker: String, count: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("worker {0} is not known to the model")]
    UnknownWorker(String),

    #[error("test worker {0} has no cluster assignment")]
    Unassigned(String),

    #[error("no records to fit")]
    EmptyRecords,

    #[error("embedding of worker {0} has zero norm")]
    ZeroNormEmbedding(String),

    #[error("assignments cover different worker sets")]
    MismatchedWorkers,

    #[error("corpus was not generated from this ground truth (expected provenance {expected:?}, found {found:?})")]
    Provenance {
        expected: String,
        found: Option<String>,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

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

    pub(crate) fn dim(context: impl Into<String>, expected: usize, found: usize) -> Self {
        Error::DimensionMismatch {
            context: context.into(),
            expected,
            found,
        }
    }
}
