//! Crate-wide error type.

use crate::scaling::IpfResult;

/// Errors produced by any confmat operation.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A parameter is outside its documented domain (non-positive eps,
    /// odd step cap, out-of-range strength, ...).
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// The input is structurally valid but degenerate for the requested
    /// operation (zero row/column/total). Callers that need robustness
    /// should smooth first.
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// Two matrices (or a matrix and a vector) do not have compatible shapes.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// Matrix scaling requires strictly positive data.
    #[error("non-positive input: {0}")]
    NonPositiveInput(String),

    /// Target row and column sums do not share the same total.
    #[error("infeasible marginals: row total {row_total} vs column total {col_total}")]
    InfeasibleMarginals { row_total: f64, col_total: f64 },

    /// Iterative scaling hit its step cap before reaching the tolerance.
    /// Carries the best iterate so callers can inspect or persist it.
    #[error("scaling did not converge after {steps} steps (residual {residual:.3e})")]
    NonConvergence {
        steps: usize,
        residual: f64,
        best: Box<IpfResult>,
    },

    /// The requested metric has no defined value on this input
    /// (e.g. off-diagonal overlap of diagonal matrices).
    #[error("undefined metric: {0}")]
    UndefinedMetric(&'static str),

    /// A cluster required by the operation contains no points.
    #[error("empty cluster: {0}")]
    EmptyCluster(String),

    /// A file or string could not be parsed into the expected format.
    #[error("parse error: {0}")]
    Parse(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
