use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: parse error at line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: score out of range at line {line} (got {score}, expected 1..=5)")]
    ScoreOutOfRange {
        path: PathBuf,
        line: usize,
        score: i64,
    },

    #[error("dataset is empty after filtering")]
    EmptyDataset,

    #[error("user {user} has {count} positives, fewer than the {folds} folds requested")]
    TooFewPositives { user: usize, count: usize, folds: usize },

    #[error("index {index} out of range (bound {bound})")]
    IndexOutOfRange { index: usize, bound: usize },

    #[error("non-finite gradient in {param}")]
    NonFiniteGradient { param: &'static str },

    #[error("non-finite loss at epoch {epoch}, user {user}")]
    NonFiniteLoss { epoch: usize, user: usize },

    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparams(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("bad file format: {0}")]
    Format(String),

    #[error("fold {fold} failed: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
