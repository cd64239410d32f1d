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

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("relation {0} has no training triplets")]
    UnknownRelationStats(usize),

    #[error("negative sampling exhausted after {attempts} rejections for triplet ({h}, {r}, {t})")]
    SamplingExhausted {
        h: usize,
        r: usize,
        t: usize,
        attempts: usize,
    },

    #[error("batch of {requested} requested from a split of {available} triplets")]
    BatchSize { requested: usize, available: usize },

    #[error("entity `{0}` has no description")]
    MissingDescription(String),

    #[error("relation `{0}` was not seen during training")]
    UnsupportedRelation(String),

    #[error("unknown {kind} `{name}`")]
    UnknownName { kind: &'static str, name: String },

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("non-finite score for triplet ({h}, {r}, {t})")]
    NonFiniteScore { h: usize, r: usize, t: usize },

    #[error("cannot evaluate an empty test set")]
    EmptyTestSet,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-parsable category, used as the prefix of CLI error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::Format(_) => "format",
            Error::Shape(_) => "shape",
            Error::Config(_) => "config",
            Error::UnknownRelationStats(_) => "stats",
            Error::SamplingExhausted { .. } => "sampling",
            Error::BatchSize { .. } => "batch-size",
            Error::MissingDescription(_) => "missing-description",
            Error::UnsupportedRelation(_) => "unsupported-relation",
            Error::UnknownName { .. } => "unknown-name",
            Error::NonFiniteLoss { .. } => "non-finite-loss",
            Error::NonFiniteScore { .. } => "non-finite-score",
            Error::EmptyTestSet => "empty-test-set",
        }
    }
}
