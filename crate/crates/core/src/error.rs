use thiserror::Error;

/// Errors produced by data preparation, fitting and evaluation.
#[derive(Debug, Error)]
pub enum ArError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("singular least-squares system (condition number estimate {condition:.3e}): {reason}")]
    SingularSystem { condition: f64, reason: String },

    #[error("training diverged at epoch {epoch} (learning rate {learning_rate}): loss is {loss}")]
    Divergence {
        epoch: usize,
        learning_rate: f64,
        loss: f64,
    },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl ArError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        ArError::InvalidArgument(msg.into())
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            ArError::SingularSystem { .. } | ArError::Divergence { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, ArError>;
