use thiserror::Error;

pub type Result<T, E = NeelError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum NeelError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: String, found: String },

    #[error("solver failed after {iterations} iterations: {message} (last residual {residual:.3e})")]
    SolverFailure {
        message: String,
        iterations: usize,
        residual: f64,
    },

    /// The out-of-plane angle left the region where sec φ and tan φ are evaluated.
    #[error("state left the validity region at t = {time:.6}: max|phi| = {max_phi:.4} > {bound:.4}")]
    Validity { time: f64, max_phi: f64, bound: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("resource limit: {0}")]
    Resource(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl NeelError {
    pub(crate) fn grid_mismatch(expected: &crate::grid::Grid, found: &crate::grid::Grid) -> Self {
        NeelError::Dimension {
            expected: format!("{expected}"),
            found: format!("{found}"),
        }
    }

    pub(crate) fn length(expected: usize, found: usize) -> Self {
        NeelError::Dimension {
            expected: format!("length {expected}"),
            found: format!("length {found}"),
        }
    }
}
