use thiserror::Error;

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum HarnessError {
    /// Invalid configuration; the message starts with the offending path.
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] crl_core::Error),
    #[error(transparent)]
    Net(#[from] crl_net::NetError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("metrics: {0}")]
    Metrics(#[from] csv::Error),
    #[error("scores: {0}")]
    Scores(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
