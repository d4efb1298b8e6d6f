use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: cannot parse record: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("input contains no records")]
    EmptyInput,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("temporal network spans zero time but {steps} snapshots were requested")]
    DegenerateSpan { steps: usize },
    #[error("cannot split {len} snapshots into a training prefix and {n_test} test snapshots")]
    Split { len: usize, n_test: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("negative sampling: {0}")]
    Sampling(String),
    #[error("regime {regime} unavailable at step {step}: {reason}")]
    RegimeUnavailable {
        regime: String,
        step: usize,
        reason: String,
    },
    #[error("metric undefined: {0}")]
    UndefinedMetric(String),
    #[error("degenerate test: {0}")]
    DegenerateTest(String),
    #[error("cannot rewire snapshot {step}: {edges} edges exceed {capacity} node pairs")]
    ImpossibleRewire {
        step: usize,
        edges: usize,
        capacity: usize,
    },
    #[error("non-finite loss at epoch {epoch}: {diagnostic}")]
    NonFiniteLoss { epoch: usize, diagnostic: String },
    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("config: {0}")]
    Config(String),
}

impl Error {
    /// Errors caused by bad input (files, arguments, preconditions) rather than numerics.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::NonFiniteLoss { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
