//! The replay hub: owns the shared buffer, turns pushed episodes into
//! n-step transitions, serves sample batches and caches published weights.

use std::collections::BTreeMap;
use std::io::{ErrorKind, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::thread::JoinHandle;
use std::time::Duration;

use crl_core::replay::{compute_nstep, ReplayBuffer, SharedReplay};
use crl_core::wire::{
    codes, encode_message, FrameDecoder, Hello, HubStats, Message, NodeRole, PushEpisode, SampleRequest,
    SourceStats, WeightsSnapshot,
};
use crl_core::Error as CoreError;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

/// Largest batch a single `SAMPLE_REQUEST` may ask for.
pub const MAX_SAMPLE_BATCH: u32 = 1 << 16;

#[derive(Clone, Debug, PartialEq)]
pub struct HubConfig {
    pub capacity: usize,
    /// Sampling is refused until this many transitions are stored.
    pub warm_up: usize,
    pub n_step: usize,
    pub gamma: f64,
    /// Keep episodes from evaluation samplers in the buffer.
    pub store_eval: bool,
    /// Seeds the hub's sampling stream.
    pub seed: u64,
}

impl Default for HubConfig {
    fn default() -> Self {
        HubConfig {
            capacity: 1_000_000,
            warm_up: 2560,
            n_step: 1,
            gamma: 0.99,
            store_eval: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Default)]
struct Counters {
    pushed_episodes: u64,
    protocol_errors: u64,
    sources: BTreeMap<u64, SourceStats>,
}

/// Per-connection state.
#[derive(Clone, Debug, Default)]
pub struct Session {
    pub role: Option<NodeRole>,
    pub publisher: bool,
}

impl Session {
    /// An in-process session with publishing rights.
    pub fn publisher() -> Self {
        Session {
            role: Some(NodeRole::Trainer),
            publisher: true,
        }
    }
}

/// Everything the hub knows, independent of how requests arrive.
#[derive(Debug)]
pub struct HubState {
    cfg: HubConfig,
    replay: SharedReplay,
    weights: RwLock<Option<Arc<WeightsSnapshot>>>,
    rng: Mutex<ChaCha8Rng>,
    counters: Mutex<Counters>,
}

impl HubState {
    pub fn new(cfg: HubConfig) -> Result<Self> {
        Self::with_buffer(ReplayBuffer::new(cfg.capacity)?, cfg)
    }

    /// Starts from an existing buffer, e.g. one loaded from disk.
    pub fn with_buffer(buffer: ReplayBuffer, cfg: HubConfig) -> Result<Self> {
        if cfg.n_step == 0 {
            return Err(CoreError::Config("hub n_step must be at least 1".into()).into());
        }
        Ok(HubState {
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(cfg.seed)),
            cfg,
            replay: SharedReplay::new(buffer),
            weights: RwLock::new(None),
            counters: Mutex::new(Counters::default()),
        })
    }

    pub fn config(&self) -> &HubConfig {
        &self.cfg
    }

    pub fn replay(&self) -> &SharedReplay {
        &self.replay
    }

    pub fn weights(&self) -> Option<Arc<WeightsSnapshot>> {
        self.weights.read().expect("weights lock").clone()
    }

    pub fn weight_version(&self) -> u64 {
        self.weights().map_or(0, |w| w.version)
    }

    pub fn stats(&self) -> HubStats {
        let c = self.counters.lock().expect("counters lock");
        HubStats {
            size: self.replay.len() as u64,
            capacity: self.cfg.capacity as u64,
            pushed_transitions: self.replay.total_pushed(),
            pushed_episodes: c.pushed_episodes,
            sampled_transitions: self.replay.total_sampled(),
            weight_version: self.weight_version(),
            protocol_errors: c.protocol_errors,
            sources: c.sources.values().cloned().collect(),
        }
    }

    pub fn note_protocol_error(&self) {
        self.counters.lock().expect("counters lock").protocol_errors += 1;
    }

    /// Answers one request.
    pub fn handle(&self, msg: Message, session: &mut Session) -> Message {
        match msg {
            Message::Hello(h) => {
                session.role = Some(h.role);
                session.publisher = h.publisher && h.role == NodeRole::Trainer;
                Message::Hello(Hello {
                    role: NodeRole::Hub,
                    node_id: 0,
                    publisher: false,
                })
            }
            Message::PushEpisode(p) => self.push_episode(p),
            Message::WeightsRequest { have_version } => match self.weights() {
                Some(w) if w.version > have_version => Message::Weights((*w).clone()),
                _ => Message::error(codes::NO_WEIGHTS, format!("no weights newer than version {have_version}")),
            },
            Message::Weights(snapshot) => self.publish(snapshot, session),
            Message::SampleRequest(req) => self.sample(&req),
            Message::StatsRequest => Message::Stats(self.stats()),
            other => Message::error(
                codes::BAD_REQUEST,
                format!("{:?} is a reply, not a request", other.msg_type()),
            ),
        }
    }

    fn push_episode(&self, p: PushEpisode) -> Message {
        if p.episode.is_empty() {
            return Message::error(codes::EMPTY_EPISODE, "empty episode");
        }
        let transitions = match compute_nstep(&p.episode, self.cfg.n_step, self.cfg.gamma) {
            Ok(t) => t,
            Err(e) => return Message::error(codes::BAD_REQUEST, e.to_string()),
        };
        let count = transitions.len() as u64;
        if !p.eval || self.cfg.store_eval {
            if let Err(e) = self.replay.push(transitions) {
                return Message::error(codes::BAD_REQUEST, e.to_string());
            }
        }
        {
            let mut c = self.counters.lock().expect("counters lock");
            c.pushed_episodes += 1;
            let src = c.sources.entry(p.source_id).or_insert_with(|| SourceStats {
                source_id: p.source_id,
                ..SourceStats::default()
            });
            src.eval = p.eval;
            src.episodes += 1;
            src.transitions += count;
            src.return_sum += p.episode_return;
            src.last_return = p.episode_return;
        }
        Message::Stats(self.stats())
    }

    fn publish(&self, snapshot: WeightsSnapshot, session: &Session) -> Message {
        if !session.publisher {
            return Message::error(codes::BAD_REQUEST, "only the designated publisher may send weights");
        }
        {
            let mut w = self.weights.write().expect("weights lock");
            let current = w.as_ref().map_or(0, |s| s.version);
            if snapshot.version <= current {
                return Message::error(
                    codes::BAD_REQUEST,
                    format!("weight version {} does not exceed {current}", snapshot.version),
                );
            }
            *w = Some(Arc::new(snapshot));
        }
        Message::Stats(self.stats())
    }

    fn sample(&self, req: &SampleRequest) -> Message {
        if req.batch_size == 0 || req.batch_size > MAX_SAMPLE_BATCH {
            return Message::error(
                codes::BAD_REQUEST,
                format!("batch size {} outside 1..={MAX_SAMPLE_BATCH}", req.batch_size),
            );
        }
        if req.n_step as usize != self.cfg.n_step || req.gamma.to_bits() != self.cfg.gamma.to_bits() {
            return Message::error(
                codes::BAD_REQUEST,
                format!(
                    "n-step profile (n={}, gamma={}) does not match the hub's (n={}, gamma={})",
                    req.n_step, req.gamma, self.cfg.n_step, self.cfg.gamma
                ),
            );
        }
        let mut rng = self.rng.lock().expect("rng lock");
        match self.replay.sample(req.batch_size as usize, self.cfg.warm_up, &mut *rng) {
            Ok(batch) => Message::SampleBatch(batch),
            Err(CoreError::NotReady { have, need }) => {
                Message::error(codes::NOT_READY, format!("{have} transitions stored, {need} needed"))
            }
            Err(e) => Message::error(codes::BAD_REQUEST, e.to_string()),
        }
    }
}

/// A hub listening on a socket. Dropping the handle stops it.
#[derive(Debug)]
pub struct HubHandle {
    addr: SocketAddr,
    state: Arc<HubState>,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
}

impl HubHandle {
    /// Binds `addr` (port 0 picks a free port) and starts serving.
    pub fn bind(addr: &str, state: Arc<HubState>) -> Result<Self> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let local = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let accept = {
            let (state, stop) = (state.clone(), stop.clone());
            std::thread::Builder::new()
                .name("hub-accept".into())
                .spawn(move || accept_loop(listener, state, stop))?
        };
        log::info!("replay hub listening on {local}");
        Ok(HubHandle {
            addr: local,
            state,
            stop,
            accept: Some(accept),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn state(&self) -> &Arc<HubState> {
        &self.state
    }

    pub fn is_running(&self) -> bool {
        !self.stop.load(Ordering::SeqCst)
    }

    /// Stops accepting, closes every connection and waits for the threads.
    pub fn shutdown(mut self) {
        self.stop_threads();
    }

    fn stop_threads(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(t) = self.accept.take() {
            let _ = t.join();
        }
    }
}

impl Drop for HubHandle {
    fn drop(&mut self) {
        self.stop_threads();
    }
}

const POLL: Duration = Duration::from_millis(50);

fn accept_loop(listener: TcpListener, state: Arc<HubState>, stop: Arc<AtomicBool>) {
    let mut workers: Vec<JoinHandle<()>> = Vec::new();
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, peer)) => {
                let (state, stop) = (state.clone(), stop.clone());
                let spawned = std::thread::Builder::new()
                    .name(format!("hub-conn-{peer}"))
                    .spawn(move || {
                        if let Err(e) = serve(stream, &state, &stop) {
                            log::debug!("connection {peer} ended: {e}");
                        }
                    });
                match spawned {
                    Ok(h) => workers.push(h),
                    Err(e) => log::warn!("cannot spawn connection thread: {e}"),
                }
                workers.retain(|h| !h.is_finished());
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => std::thread::sleep(POLL),
            Err(e) => {
                log::warn!("accept failed: {e}");
                std::thread::sleep(POLL);
            }
        }
    }
    for w in workers {
        let _ = w.join();
    }
}

fn serve(mut stream: TcpStream, state: &HubState, stop: &AtomicBool) -> std::io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(POLL))?;
    let mut session = Session::default();
    let mut decoder = FrameDecoder::new();
    let mut chunk = vec![0u8; 64 * 1024];
    while !stop.load(Ordering::SeqCst) {
        let n = match stream.read(&mut chunk) {
            Ok(0) => return Ok(()),
            Ok(n) => n,
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut | ErrorKind::Interrupted) => {
                continue
            }
            Err(e) => return Err(e),
        };
        decoder.feed(&chunk[..n]);
        loop {
            match decoder.next_message() {
                Ok(Some(msg)) => {
                    let reply = state.handle(msg, &mut session);
                    stream.write_all(&encode_message(&reply))?;
                }
                Ok(None) => break,
                Err(e) => {
                    state.note_protocol_error();
                    log::warn!("dropping connection after protocol error: {e}");
                    let _ = stream.write_all(&encode_message(&Message::error(codes::PROTOCOL, e.to_string())));
                    return Ok(());
                }
            }
        }
    }
    Ok(())
}
