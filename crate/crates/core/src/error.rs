use thiserror::Error;

/// Errors produced by the simulator, the approximator stack, and training.
#[derive(Debug, Error)]
pub enum CoreError {
    /// A vector or matrix did not have the length the operation requires.
    #[error("shape mismatch: {0}")]
    Shape(String),
    /// A structurally invalid configuration (empty layer list, non-positive
    /// temperature, zero trajectory count, ...).
    #[error("invalid configuration: {0}")]
    Config(String),
    /// An input value violated a precondition (non-finite action, empty batch).
    #[error("invalid input: {0}")]
    Input(String),
    /// Training produced a non-finite loss or otherwise diverged.
    #[error("training failed: {0}")]
    Training(String),
    /// A numeric evaluation produced a non-finite result outside training.
    #[error("numeric failure: {0}")]
    Numeric(String),
    /// Data collection produced an unusable dataset (e.g. the scripted
    /// expert failed on too many trajectories).
    #[error("collection failed: {0}")]
    Collection(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;
