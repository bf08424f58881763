use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,

    #[error("unknown query id {0}")]
    UnknownQuery(u32),

    #[error("unknown query text {0:?}")]
    UnknownQueryText(String),

    #[error("dangling node: {0} has no neighbors")]
    DanglingNode(String),

    #[error("degenerate embedding for {0:?}")]
    DegenerateEmbedding(String),

    #[error("empty text cannot be embedded or encoded")]
    EmptyText,

    #[error("embedding dimension mismatch at line {line}: expected {expected}, found {found}")]
    DimensionMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("too few related queries: {found} < {required}")]
    TooFewQueries { found: usize, required: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("non-finite loss at epoch {epoch}, batch {batch}; parameter norms: {norms}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        norms: String,
    },

    #[error("length mismatch: {left} predictions vs {right} labels")]
    LengthMismatch { left: usize, right: usize },

    #[error("malformed input at {path}:{line}: {reason}")]
    Malformed {
        path: String,
        line: usize,
        reason: String,
    },

    #[error("bad checkpoint: {0}")]
    Checkpoint(String),

    #[error("synthetic config yields {found} related queries per anchor, need at least {required}")]
    SyntheticTooSmall { found: usize, required: usize },

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("missing artifact {0}")]
    MissingArtifact(PathBuf),

    #[error("bad run config line {line}: {reason}")]
    RunConfig { line: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn malformed(path: impl Into<String>, line: usize, reason: impl Into<String>) -> Self {
        Error::Malformed {
            path: path.into(),
            line,
            reason: reason.into(),
        }
    }
}
