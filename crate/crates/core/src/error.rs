use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("zero valid records in {0}")]
    ZeroValidRecords(String),
    #[error("duplicate comment_id {0:?}")]
    DuplicateCommentId(String),
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("invalid split spec: {0}")]
    InvalidSplitSpec(String),
    #[error("cannot stratify: only {0} featured comments (need at least 3)")]
    TooFewFeatured(usize),
    #[error("no featured comments in training set")]
    NoFeatured,
    #[error("invalid generator config: {0}")]
    InvalidSynthConfig(String),
    #[error("unknown article {0:?}")]
    UnknownArticle(String),
    #[error("unknown comment {0:?}")]
    UnknownComment(String),
    #[error("missing embedding for comment {0:?}")]
    MissingEmbedding(String),
    #[error("embedding file: {0}")]
    Embedding(String),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("training data contains a single class")]
    SingleClass,
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),
    #[error("vocabulary: {0}")]
    Vocabulary(String),
    #[error("model file: {0}")]
    ModelFormat(String),
    #[error("no pairable values for agreement")]
    NoPairableValues,
    #[error("article {0:?} has no comments")]
    EmptyArticle(String),
    #[error("no picks recorded")]
    NoPicks,
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
}
