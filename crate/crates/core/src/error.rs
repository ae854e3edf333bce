use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid size for {what}: {reason}")]
    InvalidSize { what: &'static str, reason: String },

    #[error("node index {index} out of range for graph with {n} nodes")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("{0} is undefined on an empty dataset")]
    EmptyDataset(&'static str),

    #[error("IDX parse error in {path}: {field}: {detail}")]
    Idx {
        path: PathBuf,
        field: &'static str,
        detail: String,
    },

    #[error("allocation error: class {class} exhausted ({detail})")]
    Allocation { class: usize, detail: String },

    #[error("non-positive centrality {value} at server {server}")]
    NonPositiveCentrality { server: usize, value: f64 },

    #[error("protocol desync at server {server}: {detail}")]
    ProtocolDesync { server: usize, detail: String },

    #[error("sparsity violation: w[{i}][{j}] = {value} but {j} is not in the closed neighborhood of {i}")]
    Sparsity { i: usize, j: usize, value: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{scheme} run failed for seed {seed}: {source}")]
    Run {
        scheme: String,
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("epoch {epoch}: {source}")]
    Epoch {
        epoch: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn at_epoch(self, epoch: usize) -> Self {
        Error::Epoch {
            epoch,
            source: Box::new(self),
        }
    }
}
