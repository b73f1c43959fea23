use thiserror::Error;

/// Errors raised anywhere in the model, training, metrics and IO stack.
#[derive(Debug, Error)]
pub enum VigError {
    /// Operand shapes do not fit the operation.
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    /// A configuration value violates a structural constraint.
    #[error("configuration error: {0}")]
    Config(String),

    /// The caller asked for something the API does not support.
    #[error("usage error: {0}")]
    Usage(String),

    /// Batch statistics need more than one sample per channel.
    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),

    /// Input data is malformed or inconsistent with its declared contract.
    #[error("data error: {0}")]
    Data(String),

    /// A binary container could not be decoded.
    #[error("format error at byte {offset}: {detail}")]
    Format { offset: u64, detail: String },

    /// Training diverged.
    #[error("non-finite loss at epoch {epoch}, batch {batch} (lr {lr:e})")]
    NonFiniteLoss { epoch: usize, batch: usize, lr: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl VigError {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        VigError::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn format(offset: u64, detail: impl Into<String>) -> Self {
        VigError::Format {
            offset,
            detail: detail.into(),
        }
    }
}

pub type Result<T, E = VigError> = std::result::Result<T, E>;
