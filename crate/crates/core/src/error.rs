use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes disagree. `context` names the layer, field or operand at fault.
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: String,
        expected: usize,
        actual: usize,
    },
    #[error("non-finite value in {context} at index {index}")]
    NonFinite { context: &'static str, index: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("malformed data: {0}")]
    Format(String),
    /// Not enough data stored yet; the caller should retry later.
    #[error("not ready: {have} stored, {need} needed")]
    NotReady { have: usize, need: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(context: impl Into<String>, expected: usize, actual: usize) -> Self {
        Error::Dimension {
            context: context.into(),
            expected,
            actual,
        }
    }
}
