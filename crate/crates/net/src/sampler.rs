//! Sampler role: runs episodes with the freshest actor it has and streams
//! them to the hub.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

use crl_core::algorithms::{ActMode, ActionBounds, Policy};
use crl_core::envs::Env;
use crl_core::replay::Episode;
use crl_core::wire::{codes, Hello, Message, NodeRole, PushEpisode};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::conn::{Backoff, Connection};
use crate::error::{NetError, Result};

#[derive(Clone, Debug)]
pub struct SamplerConfig {
    pub node_id: u64,
    pub hub_addr: String,
    pub mode: ActMode,
    /// Episodes between weight refresh attempts.
    pub refresh_period: u64,
    /// Behaviour noise for deterministic actors, in half-range units.
    pub exploration_sigma: f64,
    pub seed: u64,
    /// Stop after this many episodes; `None` runs until the stop flag.
    pub max_episodes: Option<u64>,
    /// Episodes held while the hub is unreachable; the oldest are dropped.
    pub queue_limit: usize,
    pub backoff: Backoff,
    /// How long a finishing sampler keeps trying to deliver queued episodes.
    pub drain_timeout: Duration,
}

impl SamplerConfig {
    pub fn new(node_id: u64, hub_addr: impl Into<String>) -> Self {
        SamplerConfig {
            node_id,
            hub_addr: hub_addr.into(),
            mode: ActMode::Train,
            refresh_period: 1,
            exploration_sigma: 0.1,
            seed: node_id,
            max_episodes: None,
            queue_limit: 100,
            backoff: Backoff::default(),
            drain_timeout: Duration::from_secs(5),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SamplerReport {
    pub episodes_run: u64,
    pub episodes_pushed: u64,
    /// Episodes discarded because the local queue overflowed.
    pub episodes_dropped: u64,
    /// Episodes the hub refused (for example malformed ones).
    pub episodes_rejected: u64,
    /// Episodes still queued when the sampler exited.
    pub episodes_unsent: u64,
    pub transitions_pushed: u64,
    /// Tags of episodes the hub acknowledged.
    pub pushed_tags: Vec<u64>,
    /// Weight version used for each episode run, in order.
    pub versions: Vec<u64>,
    pub returns: Vec<f64>,
    pub connects: u64,
}

struct Link<'a> {
    cfg: &'a SamplerConfig,
    conn: Option<Connection>,
    backoff: Backoff,
}

impl Link<'_> {
    fn ensure(&mut self, report: &mut SamplerReport) -> bool {
        if self.conn.is_none() && self.backoff.ready() {
            let hello = Hello {
                role: NodeRole::Sampler,
                node_id: self.cfg.node_id,
                publisher: false,
            };
            match Connection::open(&self.cfg.hub_addr, hello) {
                Ok(c) => {
                    self.conn = Some(c);
                    self.backoff.succeeded();
                    report.connects += 1;
                }
                Err(e) => {
                    log::debug!("sampler {}: hub unreachable ({e}), retry in {:?}", self.cfg.node_id, self.backoff.current_delay());
                    self.backoff.failed();
                }
            }
        }
        self.conn.is_some()
    }

    fn request(&mut self, msg: &Message) -> Result<Message> {
        let conn = self.conn.as_mut().ok_or(NetError::Disconnected)?;
        let res = conn.request(msg);
        if let Err(e) = &res {
            // The hub closes the stream after a protocol error.
            if e.is_connection_loss() || matches!(e, NetError::Remote { code: codes::PROTOCOL, .. }) {
                self.conn = None;
                self.backoff.failed();
            }
        }
        res
    }
}

/// What a sampler learns about each episode as it finishes.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeInfo {
    pub index: u64,
    pub steps: u64,
    pub episode_return: f64,
    pub weight_version: u64,
}

/// Runs the sampler loop until `stop` is set or `max_episodes` is reached.
pub fn run_sampler(cfg: &SamplerConfig, env: &mut dyn Env, stop: &AtomicBool) -> Result<SamplerReport> {
    run_sampler_with(cfg, env, stop, |_| true)
}

/// [`run_sampler`] with a callback after every episode. Returning `false`
/// ends the run as if `max_episodes` had been reached.
pub fn run_sampler_with(
    cfg: &SamplerConfig,
    env: &mut dyn Env,
    stop: &AtomicBool,
    mut on_episode: impl FnMut(&EpisodeInfo) -> bool,
) -> Result<SamplerReport> {
    let spec = env.spec().clone();
    let bounds = ActionBounds::new(spec.action_low.clone(), spec.action_high.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut link = Link {
        cfg,
        conn: None,
        backoff: cfg.backoff.clone(),
    };
    let mut report = SamplerReport::default();
    let mut policy: Option<Policy> = None;
    let mut version = 0u64;
    let mut since_refresh = u64::MAX;
    let mut queue: VecDeque<PushEpisode> = VecDeque::new();

    while !stop.load(Ordering::SeqCst) && cfg.max_episodes.is_none_or(|m| report.episodes_run < m) {
        let connected = link.ensure(&mut report);
        if connected && since_refresh >= cfg.refresh_period {
            match link.request(&Message::WeightsRequest { have_version: version }) {
                Ok(Message::Weights(snap)) if snap.version > version => {
                    let actor = snap.params("actor")?;
                    policy = Some(Policy {
                        kind: snap.algo,
                        actor,
                        bounds: bounds.clone(),
                        exploration_sigma: cfg.exploration_sigma,
                    });
                    version = snap.version;
                }
                Ok(_) | Err(NetError::Remote { .. }) => {}
                Err(e) if e.is_connection_loss() => {}
                Err(e) => return Err(e),
            }
            since_refresh = 0;
        }

        if cfg.mode == ActMode::Eval && policy.is_none() {
            // Evaluation needs a trained actor; wait for one.
            std::thread::sleep(Duration::from_millis(50));
            continue;
        }

        let tag = (cfg.node_id << 32) | (report.episodes_run & 0xFFFF_FFFF);
        let episode = run_episode(env, policy.as_ref(), &bounds, cfg.mode, tag, &mut rng)?;
        report.episodes_run += 1;
        since_refresh = since_refresh.saturating_add(1);
        report.versions.push(version);
        let ret = episode.total_reward();
        report.returns.push(ret);
        let more = on_episode(&EpisodeInfo {
            index: report.episodes_run - 1,
            steps: episode.len() as u64,
            episode_return: ret,
            weight_version: version,
        });
        queue.push_back(PushEpisode {
            source_id: cfg.node_id,
            eval: cfg.mode == ActMode::Eval,
            weight_version: version,
            episode_return: ret,
            episode,
        });
        while queue.len() > cfg.queue_limit {
            queue.pop_front();
            report.episodes_dropped += 1;
        }

        flush(&mut link, &mut queue, &mut report);
        if !more {
            break;
        }
    }

    let deadline = Instant::now() + cfg.drain_timeout;
    while !queue.is_empty() && !stop.load(Ordering::SeqCst) && Instant::now() < deadline {
        flush(&mut link, &mut queue, &mut report);
        if !queue.is_empty() {
            std::thread::sleep(link.backoff.remaining().clamp(Duration::from_millis(10), Duration::from_millis(100)));
        }
    }
    report.episodes_unsent = queue.len() as u64;
    Ok(report)
}

fn flush(link: &mut Link<'_>, queue: &mut VecDeque<PushEpisode>, report: &mut SamplerReport) {
    if !link.ensure(report) {
        return;
    }
    while let Some(front) = queue.front() {
        let msg = Message::PushEpisode(front.clone());
        match link.request(&msg) {
            Ok(_) => {
                let done = queue.pop_front().expect("front exists");
                report.episodes_pushed += 1;
                report.transitions_pushed += done.episode.len() as u64;
                report.pushed_tags.push(done.episode.tag);
            }
            Err(NetError::Remote { code, message }) if code != codes::PROTOCOL => {
                log::warn!("sampler {}: hub rejected episode: {message}", link.cfg.node_id);
                queue.pop_front();
                report.episodes_rejected += 1;
            }
            Err(_) => return,
        }
    }
}

/// Rolls out one episode. Without a policy, train-mode samplers act
/// uniformly at random within the bounds.
pub fn run_episode(
    env: &mut dyn Env,
    policy: Option<&Policy>,
    bounds: &ActionBounds,
    mode: ActMode,
    tag: u64,
    rng: &mut ChaCha8Rng,
) -> Result<Episode> {
    let obs = env.reset(rng.next_u64());
    let mut episode = Episode::new(tag, &obs, bounds.dim());
    let mut state: Vec<f64> = obs.iter().map(|&v| v as f64).collect();
    loop {
        let action = match policy {
            Some(p) => p.act(&state, mode, rng)?,
            None => (0..bounds.dim())
                .map(|k| rng.random_range(bounds.low()[k]..=bounds.high()[k]))
                .collect(),
        };
        let step = env.step(&action)?;
        let stored: Vec<f32> = action.iter().map(|&v| v as f32).collect();
        episode.push(&stored, step.reward, &step.obs)?;
        state = step.obs.iter().map(|&v| v as f64).collect();
        if step.done || step.truncated {
            episode.terminal = step.done;
            return Ok(episode);
        }
    }
}
