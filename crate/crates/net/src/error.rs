use crl_core::wire::WireError;
use thiserror::Error;

pub type Result<T, E = NetError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum NetError {
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Core(#[from] crl_core::Error),
    /// The peer answered with an `ERROR` frame.
    #[error("remote error {code}: {message}")]
    Remote { code: u16, message: String },
    #[error("unexpected {0} reply")]
    UnexpectedReply(&'static str),
    #[error("not connected")]
    Disconnected,
    #[error("shut down")]
    Shutdown,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl NetError {
    /// Errors after which the connection should be dropped and re-established.
    pub fn is_connection_loss(&self) -> bool {
        matches!(self, NetError::Wire(_) | NetError::Io(_) | NetError::Disconnected)
    }
}
