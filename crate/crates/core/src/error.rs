use std::path::PathBuf;

use crate::data::Group;

/// Errors raised anywhere in the scoring and allocation pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("records without labels: {}", .0.join(", "))]
    Unlabeled(Vec<String>),

    #[error("embedding file line {line}: {message}")]
    Embedding { line: usize, message: String },

    #[error("no embedding for records: {}", .0.join(", "))]
    MissingEmbedding(Vec<String>),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("single-class input: {0}")]
    SingleClass(&'static str),

    #[error("group {0} has no members")]
    EmptyGroup(Group),

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },

    #[error("infeasible floors: group {group} {reason}")]
    InfeasibleFloors { group: Group, reason: String },

    #[error("layout hash mismatch: artifact {expected:#x}, featurizer {actual:#x}")]
    LayoutMismatch { expected: u64, actual: u64 },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
