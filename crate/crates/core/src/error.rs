use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("episode exhausted: horizon {horizon} already reached")]
    EpisodeExhausted { horizon: usize },

    #[error("invalid action {action} (action space has {n_actions} actions)")]
    InvalidAction { action: usize, n_actions: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical failure at {context}: {detail}")]
    Numerical { context: String, detail: String },

    #[error("undefined index: {0}")]
    UndefinedIndex(String),

    #[error("collection timed out after {steps} steps; deficient classes: {deficient:?}")]
    CollectionTimeout {
        steps: usize,
        deficient: Vec<(i64, i64)>,
    },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("ambiguous transition: {0}")]
    AmbiguousTransition(String),

    #[error("empty cluster: {0}")]
    EmptyCluster(String),

    #[error("missing artifact {}", .0.display())]
    MissingArtifact(PathBuf),

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn numerical(context: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Numerical {
            context: context.into(),
            detail: detail.into(),
        }
    }

    /// Process exit code used by the command-line runner.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numerical { .. } => 3,
            Error::CollectionTimeout { .. } => 4,
            Error::Io { .. } => 1,
            _ => 2,
        }
    }
}
