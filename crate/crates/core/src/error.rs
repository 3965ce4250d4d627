use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum IsmError {
    #[error("dimension mismatch in {context}: expected {expected}, got {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("matrix is singular to working precision: pivot {pivot:.3e} at column {column}, row-norm scale {scale:.3e}")]
    Singular {
        column: usize,
        pivot: f64,
        scale: f64,
    },

    #[error("matrix is not Hermitian (residual {residual:.3e})")]
    NotHermitian { residual: f64 },

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("invalid time layout: {0}")]
    Layout(String),

    #[error("operation not supported by this model: {0}")]
    Capability(String),

    #[error("invalid configuration key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("{what} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NotConverged {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("monotonic update failed at step {step}, channel {channel}: {message}")]
    MonotonicUpdate {
        step: usize,
        channel: usize,
        message: String,
    },

    #[error("worker failed on task {task}: {message}")]
    Worker { task: usize, message: String },

    #[error("malformed message: {0}")]
    Wire(String),

    #[error("malformed control file: {0}")]
    ControlFile(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, IsmError>;
