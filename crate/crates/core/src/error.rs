use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {actual}")]
    Dimension {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("edge weight {index} is negative ({value}); pairwise terms would not be supermodular")]
    NegativeEdgeWeight { index: usize, value: f64 },

    #[error("invalid label {0}; labels must be -1 or +1")]
    InvalidLabel(i64),

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("invalid flow network: {0}")]
    InvalidNetwork(String),

    #[error("max-flow exceeded its augmentation budget of {0}")]
    FlowBudget(u64),

    #[error("degenerate category: ground truth has {positives} positives and {negatives} negatives")]
    DegenerateCategory { positives: usize, negatives: usize },

    #[error("category has no positive examples")]
    NoPositives,

    #[error("all models have zero edge weights")]
    EmptyImportance,

    #[error("instance too large for exhaustive search: {size} > {cap}")]
    TooLarge { size: usize, cap: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("unsupported format version {found} in {path} (expected {expected})")]
    FormatVersion {
        path: PathBuf,
        found: u64,
        expected: u64,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
