use thiserror::Error;

/// Errors raised anywhere in the crate.
#[derive(Debug, Error)]
pub enum RggmError {
    /// Shapes, parameters or settings that violate a documented invariant.
    #[error("configuration error: {0}")]
    Config(String),

    /// An argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A caller broke an operation's precondition (e.g. conditioning on an edge that is present).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Floating-point breakdown: failed Cholesky, non-positive update denominator after refresh.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// A request larger than a hard cap.
    #[error("size error: {what} = {requested} exceeds cap {cap}")]
    Size {
        what: &'static str,
        requested: u64,
        cap: u64,
    },

    /// Malformed input data (graph files, snapshot streams).
    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl RggmError {
    pub fn is_numerical(&self) -> bool {
        matches!(self, RggmError::Numerical(_))
    }
}

pub type Result<T> = std::result::Result<T, RggmError>;
