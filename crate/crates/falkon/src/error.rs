//! Crate-wide error type.

use thiserror::Error;

/// Errors shared by all solver components.
#[derive(Debug, Error)]
pub enum FalkonError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix is not positive definite at block column {block_col}")]
    NotPositiveDefinite { block_col: usize },

    #[error("zero diagonal entry at row {row} in triangular solve")]
    ZeroDiagonal { row: usize },

    #[error("memory budget too small: {0}")]
    BudgetTooSmall(String),

    #[error("scratch budget exceeded on worker {worker}: requested {requested} elements, cap {cap}")]
    BudgetExceeded {
        worker: usize,
        requested: usize,
        cap: usize,
    },

    #[error("infeasible batch budget: {0}")]
    InfeasibleBudget(String),

    #[error("no scheduling progress for {waited_ms} ms; deadlock suspected while waiting for tile ({tile_row}, {tile_col})")]
    DeadlockTimeout {
        tile_row: usize,
        tile_col: usize,
        waited_ms: u64,
    },

    #[error("conjugate gradient diverged: non-finite value at iteration {iteration}")]
    Divergence { iteration: usize },

    #[error("invalid label: {0}")]
    InvalidLabel(String),

    #[error("loss contract violated: {0}")]
    LossContract(String),

    #[error("buffers must not alias")]
    Aliasing,

    #[error("operation aborted after failure on a peer worker")]
    Aborted,

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("model file error: {0}")]
    ModelFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("{0}")]
    Metric(String),
}

pub type Result<T> = std::result::Result<T, FalkonError>;
