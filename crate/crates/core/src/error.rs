use std::path::PathBuf;

use crate::dynamics::Frame;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("control frame mismatch: expected {expected:?}, got {found:?}")]
    FrameMismatch { expected: Frame, found: Frame },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("horizon mismatch: expected {expected}, got {found}")]
    HorizonMismatch { expected: usize, found: usize },

    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("training diverged at step {step}: loss = {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("guidance gradient is non-finite at schedule step {step} (tau = {tau})")]
    GuidanceNonFinite { step: usize, tau: f64 },

    #[error("no feasible sample: every cost is infinite")]
    NoFeasibleSample,

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("scenario generation: {0}")]
    Placement(String),

    #[error("truncated episode log: {0}")]
    TruncatedLog(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
