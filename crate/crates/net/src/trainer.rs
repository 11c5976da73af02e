//! Trainer role: pulls batches from a [`BatchSource`], runs one algorithm
//! update per batch and periodically publishes the actor.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use crl_core::algorithms::{Agent, Losses};
use crl_core::replay::{to_update_batch, Transition};
use crl_core::wire::{codes, Hello, Message, NodeRole, SampleRequest, WeightsSnapshot};

use crate::conn::{Backoff, Connection};
use crate::error::{NetError, Result};
use crate::hub::{HubState, Session};

const RETRY: Duration = Duration::from_millis(20);

/// Where batches come from and where weights go.
pub trait BatchSource {
    /// Blocks until a batch is available; `None` once `stop` is set or the
    /// source is exhausted.
    fn next_batch(&mut self, req: &SampleRequest, stop: &AtomicBool) -> Result<Option<Vec<Transition>>>;

    fn publish(&mut self, snapshot: WeightsSnapshot, stop: &AtomicBool) -> Result<()>;
}

/// Talks to an in-process hub directly, without sockets.
#[derive(Debug)]
pub struct LocalSource {
    hub: Arc<HubState>,
    session: Session,
}

impl LocalSource {
    pub fn new(hub: Arc<HubState>, publisher: bool) -> Self {
        let session = if publisher { Session::publisher() } else { Session::default() };
        LocalSource { hub, session }
    }
}

fn check_reply_for_batch(reply: Message) -> Result<Option<Vec<Transition>>> {
    match reply {
        Message::SampleBatch(b) => Ok(Some(b)),
        Message::Error { code: codes::NOT_READY, .. } => Ok(None),
        Message::Error { code, message } => Err(NetError::Remote { code, message }),
        _ => Err(NetError::UnexpectedReply("sample")),
    }
}

impl BatchSource for LocalSource {
    fn next_batch(&mut self, req: &SampleRequest, stop: &AtomicBool) -> Result<Option<Vec<Transition>>> {
        while !stop.load(Ordering::SeqCst) {
            let reply = self.hub.handle(Message::SampleRequest(req.clone()), &mut self.session);
            if let Some(b) = check_reply_for_batch(reply)? {
                return Ok(Some(b));
            }
            std::thread::sleep(RETRY);
        }
        Ok(None)
    }

    fn publish(&mut self, snapshot: WeightsSnapshot, _stop: &AtomicBool) -> Result<()> {
        match self.hub.handle(Message::Weights(snapshot), &mut self.session) {
            Message::Error { code, message } => Err(NetError::Remote { code, message }),
            _ => Ok(()),
        }
    }
}

/// Talks to a hub over TCP, reconnecting with backoff when the link drops.
#[derive(Debug)]
pub struct RemoteSource {
    addr: String,
    hello: Hello,
    conn: Option<Connection>,
    backoff: Backoff,
    pub reconnects: u64,
}

impl RemoteSource {
    pub fn new(addr: impl Into<String>, node_id: u64, publisher: bool) -> Self {
        RemoteSource {
            addr: addr.into(),
            hello: Hello {
                role: NodeRole::Trainer,
                node_id,
                publisher,
            },
            conn: None,
            backoff: Backoff::default(),
            reconnects: 0,
        }
    }

    /// Sends `msg`, reconnecting as needed, until a reply arrives or `stop` is set.
    fn request(&mut self, msg: &Message, stop: &AtomicBool) -> Result<Option<Message>> {
        while !stop.load(Ordering::SeqCst) {
            if self.conn.is_none() {
                if !self.backoff.ready() {
                    std::thread::sleep(self.backoff.remaining().min(Duration::from_millis(100)));
                    continue;
                }
                match Connection::open(&self.addr, self.hello.clone()) {
                    Ok(c) => {
                        self.conn = Some(c);
                        self.backoff.succeeded();
                        self.reconnects += 1;
                    }
                    Err(e) => {
                        log::debug!("trainer: hub unreachable ({e})");
                        self.backoff.failed();
                        continue;
                    }
                }
            }
            let conn = self.conn.as_mut().expect("connected above");
            match conn.request(msg) {
                Ok(reply) => return Ok(Some(reply)),
                Err(NetError::Remote { code, message }) => {
                    if code == codes::PROTOCOL {
                        self.conn = None;
                    }
                    return Ok(Some(Message::Error { code, message }));
                }
                Err(e) if e.is_connection_loss() => {
                    log::warn!("trainer: lost hub connection ({e}), reconnecting");
                    self.conn = None;
                    self.backoff.failed();
                }
                Err(e) => return Err(e),
            }
        }
        Ok(None)
    }
}

impl BatchSource for RemoteSource {
    fn next_batch(&mut self, req: &SampleRequest, stop: &AtomicBool) -> Result<Option<Vec<Transition>>> {
        let msg = Message::SampleRequest(req.clone());
        while let Some(reply) = self.request(&msg, stop)? {
            if let Some(b) = check_reply_for_batch(reply)? {
                return Ok(Some(b));
            }
            std::thread::sleep(RETRY);
        }
        Ok(None)
    }

    fn publish(&mut self, snapshot: WeightsSnapshot, stop: &AtomicBool) -> Result<()> {
        match self.request(&Message::Weights(snapshot), stop)? {
            None | Some(Message::Stats(_)) => Ok(()),
            Some(Message::Error { code, message }) => Err(NetError::Remote { code, message }),
            Some(_) => Err(NetError::UnexpectedReply("publish")),
        }
    }
}

/// Replays a fixed batch sequence; records what would have been published.
#[derive(Debug, Default)]
pub struct ScriptedSource {
    pub batches: VecDeque<Vec<Transition>>,
    pub published: Vec<WeightsSnapshot>,
}

impl ScriptedSource {
    pub fn new(batches: impl IntoIterator<Item = Vec<Transition>>) -> Self {
        ScriptedSource {
            batches: batches.into_iter().collect(),
            published: Vec::new(),
        }
    }
}

impl BatchSource for ScriptedSource {
    fn next_batch(&mut self, _req: &SampleRequest, _stop: &AtomicBool) -> Result<Option<Vec<Transition>>> {
        Ok(self.batches.pop_front())
    }

    fn publish(&mut self, snapshot: WeightsSnapshot, _stop: &AtomicBool) -> Result<()> {
        self.published.push(snapshot);
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainerConfig {
    /// Updates between weight publications.
    pub publish_period: u64,
    /// Whether this trainer's weights are the ones samplers use.
    pub publisher: bool,
    pub max_updates: Option<u64>,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            publish_period: 100,
            publisher: true,
            max_updates: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Trainer {
    pub agent: Agent,
    pub cfg: TrainerConfig,
    /// Last version published; the next one is this plus one.
    pub weight_version: u64,
}

impl Trainer {
    pub fn new(agent: Agent, cfg: TrainerConfig) -> Self {
        Trainer {
            agent,
            cfg,
            weight_version: 0,
        }
    }

    pub fn sample_request(&self) -> SampleRequest {
        SampleRequest {
            batch_size: self.agent.cfg.batch_size as u32,
            n_step: self.agent.cfg.n_step as u32,
            gamma: self.agent.cfg.gamma,
        }
    }

    /// The current actor as a snapshot at `version`.
    pub fn snapshot(&self, version: u64) -> WeightsSnapshot {
        WeightsSnapshot::from_params(version, self.agent.cfg.kind, &[("actor", &self.agent.nets.actor.online)])
    }

    /// One update on an explicit batch, publishing when due.
    pub fn update_on(
        &mut self,
        batch: &[Transition],
        source: &mut dyn BatchSource,
        stop: &AtomicBool,
    ) -> Result<Losses> {
        let losses = self.agent.update(&to_update_batch(batch)?)?;
        if self.cfg.publisher && self.cfg.publish_period > 0 && self.agent.update_count % self.cfg.publish_period == 0 {
            let next = self.weight_version + 1;
            source.publish(self.snapshot(next), stop)?;
            self.weight_version = next;
        }
        Ok(losses)
    }

    /// Pulls one batch and updates on it. `None` when the source stopped.
    pub fn step(&mut self, source: &mut dyn BatchSource, stop: &AtomicBool) -> Result<Option<Losses>> {
        let req = self.sample_request();
        match source.next_batch(&req, stop)? {
            Some(batch) => self.update_on(&batch, source, stop).map(Some),
            None => Ok(None),
        }
    }

    /// Loops until `stop`, source exhaustion or `max_updates`. Returns the
    /// number of updates performed in this call.
    pub fn run(
        &mut self,
        source: &mut dyn BatchSource,
        stop: &AtomicBool,
        mut on_update: impl FnMut(&Trainer, &Losses),
    ) -> Result<u64> {
        let mut done = 0;
        while self.cfg.max_updates.is_none_or(|m| self.agent.update_count < m) {
            match self.step(source, stop)? {
                Some(losses) => {
                    done += 1;
                    on_update(self, &losses);
                }
                None => break,
            }
        }
        Ok(done)
    }
}
