use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("dangling endpoint: edge type `{edge_type}` references {node_type} #{id}, but only {count} exist")]
    DanglingEndpoint {
        edge_type: String,
        node_type: String,
        id: usize,
        count: usize,
    },

    #[error("invalid metapath `{name}`: {reason}")]
    InvalidMetapath { name: String, reason: String },

    #[error("power iteration did not converge after {iterations} iterations (last L1 change {last_change:e})")]
    NotConverged { iterations: usize, last_change: f64 },

    #[error("requested {requested} non-trivial eigenvectors but only {available} exist")]
    SpectrumExhausted { requested: usize, available: usize },

    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
