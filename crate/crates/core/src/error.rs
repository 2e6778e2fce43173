use std::path::PathBuf;

use thiserror::Error;

use crate::graph::NodeId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("unknown {kind}: {key}")]
    Lookup { kind: &'static str, key: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("property `{property}` missing on nodes {nodes:?}")]
    MissingProperty { property: String, nodes: Vec<NodeId> },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("cosine similarity is undefined for a zero vector")]
    UndefinedSimilarity,

    #[error("projection error: {0}")]
    Projection(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("feature error: {0}")]
    Feature(String),

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Training { epoch: usize, loss: f64 },

    #[error("matrix is not symmetric (max deviation {max_deviation:e})")]
    Symmetry { max_deviation: f64 },

    #[error("size error: {0}")]
    Size(String),

    #[error("neighbor graph is disconnected; component sizes {components:?}")]
    Connectivity { components: Vec<usize> },

    #[error("t-SNE gradient became non-finite at iteration {iteration}")]
    Divergence { iteration: usize },

    #[error("class error: {0}")]
    Class(String),

    #[error("degenerate query: {0}")]
    DegenerateQuery(String),

    #[error("stage `{stage}` failed: {cause}")]
    Stage { stage: String, cause: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn lookup(kind: &'static str, key: impl ToString) -> Self {
        Error::Lookup {
            kind,
            key: key.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
