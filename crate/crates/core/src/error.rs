use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
}

impl TensorError {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Self::Dimension(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Self::Contract(msg.into())
    }
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

/// Errors raised by the memory bank and the modules built on it.
#[derive(Debug, Error)]
pub enum MemoryError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("memory bank is not initialized")]
    Uninitialized,
    #[error("memory bank is already initialized")]
    AlreadyInitialized,
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("k-means failed: {0}")]
    KMeans(String),
    #[error("update budget {k} outside [{lo}, {hi}]")]
    BudgetOutOfRange { k: usize, lo: usize, hi: usize },
    #[error("format error: {0}")]
    Format(String),
}
