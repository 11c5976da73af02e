use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::time::{Duration, Instant};

use crl_core::wire::{self, Hello, Message, NodeRole};

use crate::error::{NetError, Result};

/// A client-side request/reply connection to the hub.
#[derive(Debug)]
pub struct Connection {
    stream: TcpStream,
}

impl Connection {
    pub const IO_TIMEOUT: Duration = Duration::from_secs(10);

    /// Connects and exchanges `HELLO`.
    pub fn open(addr: &str, hello: Hello) -> Result<Self> {
        let target = resolve(addr)?;
        let stream = TcpStream::connect_timeout(&target, Duration::from_secs(2))?;
        stream.set_nodelay(true)?;
        stream.set_read_timeout(Some(Self::IO_TIMEOUT))?;
        stream.set_write_timeout(Some(Self::IO_TIMEOUT))?;
        let mut conn = Connection { stream };
        match conn.request(&Message::Hello(hello))? {
            Message::Hello(h) if h.role == NodeRole::Hub => Ok(conn),
            _ => Err(NetError::UnexpectedReply("handshake")),
        }
    }

    /// Sends one message and waits for its reply. `ERROR` replies become
    /// [`NetError::Remote`].
    pub fn request(&mut self, msg: &Message) -> Result<Message> {
        wire::write_message(&mut self.stream, msg)?;
        match wire::read_message(&mut self.stream)? {
            Message::Error { code, message } => Err(NetError::Remote { code, message }),
            reply => Ok(reply),
        }
    }
}

fn resolve(addr: &str) -> Result<SocketAddr> {
    addr.to_socket_addrs()?
        .next()
        .ok_or_else(|| NetError::Io(std::io::Error::new(std::io::ErrorKind::NotFound, format!("cannot resolve {addr}"))))
}

/// Exponential reconnect schedule: 0.5 s doubling to a 30 s cap.
#[derive(Clone, Debug)]
pub struct Backoff {
    pub initial: Duration,
    pub cap: Duration,
    delay: Duration,
    next_attempt: Option<Instant>,
}

impl Default for Backoff {
    fn default() -> Self {
        Backoff::new(Duration::from_millis(500), Duration::from_secs(30))
    }
}

impl Backoff {
    pub fn new(initial: Duration, cap: Duration) -> Self {
        Backoff {
            initial,
            cap,
            delay: initial,
            next_attempt: None,
        }
    }

    /// Whether an attempt is due now.
    pub fn ready(&self) -> bool {
        self.next_attempt.is_none_or(|t| Instant::now() >= t)
    }

    /// Time left until the next attempt is due.
    pub fn remaining(&self) -> Duration {
        self.next_attempt
            .map_or(Duration::ZERO, |t| t.saturating_duration_since(Instant::now()))
    }

    pub fn failed(&mut self) {
        self.next_attempt = Some(Instant::now() + self.delay);
        self.delay = (self.delay * 2).min(self.cap);
    }

    pub fn succeeded(&mut self) {
        self.delay = self.initial;
        self.next_attempt = None;
    }

    pub fn current_delay(&self) -> Duration {
        self.delay
    }
}
