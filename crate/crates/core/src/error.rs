use std::path::PathBuf;

use crate::engine::TaskLossVector;
use crate::graph::ValidationReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("matrix is not positive definite (failed at pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("unknown {kind} `{id}`")]
    Lookup { kind: &'static str, id: String },

    #[error("topology error: {0}")]
    Topology(String),

    #[error("invalid relation graph: {0}")]
    InvalidGraph(ValidationReport),

    #[error("non-finite activations in autoencoder for entity `{entity}`")]
    Divergence { entity: String },

    #[error("training diverged after {} finite epochs: {reason}", history.len())]
    Training {
        reason: String,
        history: Vec<TaskLossVector>,
    },

    #[error("surrogate error: {0}")]
    Surrogate(String),

    #[error("fold error: {0}")]
    Fold(String),

    #[error("{}:{line}: {msg}", path.display())]
    Load {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("config error in {path}: {msg}")]
    Config { path: String, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
