//! Experience replay: episode ingestion with n-step return precomputation,
//! a FIFO ring buffer, uniform sampling with replacement, and a shared
//! (multi-writer, multi-reader) wrapper.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use rand::Rng;

use crate::algorithms::UpdateBatch;
use crate::error::{Error, Result};
use crate::tensor::Tensor2;
use crate::wire::{self, Message, WireError};

/// One stored n-step transition. `next_state` is `s_{t+k}` and
/// `discount_pow` is `γᵏ`, forced to zero for true terminals.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    /// Identifies the source episode.
    pub episode_tag: u64,
    /// Step index `t` within that episode.
    pub step: u32,
    pub state: Vec<f32>,
    pub action: Vec<f32>,
    pub n_step_reward: f64,
    pub next_state: Vec<f32>,
    pub discount_pow: f64,
    pub done: bool,
}

/// A complete rollout: `T + 1` states (including the final one), `T`
/// actions and rewards, stored flat.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub tag: u64,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub states: Vec<f32>,
    pub actions: Vec<f32>,
    pub rewards: Vec<f64>,
    /// True terminal; `false` means the rollout was cut by a time limit.
    pub terminal: bool,
}

impl Episode {
    pub fn new(tag: u64, initial_state: &[f32], act_dim: usize) -> Self {
        Episode {
            tag,
            obs_dim: initial_state.len(),
            act_dim,
            states: initial_state.to_vec(),
            actions: Vec::new(),
            rewards: Vec::new(),
            terminal: false,
        }
    }

    pub fn push(&mut self, action: &[f32], reward: f64, next_state: &[f32]) -> Result<()> {
        if action.len() != self.act_dim {
            return Err(Error::dim("episode action", self.act_dim, action.len()));
        }
        if next_state.len() != self.obs_dim {
            return Err(Error::dim("episode state", self.obs_dim, next_state.len()));
        }
        self.actions.extend_from_slice(action);
        self.rewards.push(reward);
        self.states.extend_from_slice(next_state);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn state(&self, t: usize) -> &[f32] {
        &self.states[t * self.obs_dim..(t + 1) * self.obs_dim]
    }

    pub fn action(&self, t: usize) -> &[f32] {
        &self.actions[t * self.act_dim..(t + 1) * self.act_dim]
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }

    /// Checks the flat arrays agree with the step count.
    pub fn validate(&self) -> Result<()> {
        let t = self.rewards.len();
        if self.states.len() != (t + 1) * self.obs_dim {
            return Err(Error::dim("episode states", (t + 1) * self.obs_dim, self.states.len()));
        }
        if self.actions.len() != t * self.act_dim {
            return Err(Error::dim("episode actions", t * self.act_dim, self.actions.len()));
        }
        if let Some(i) = self.rewards.iter().position(|r| !r.is_finite()) {
            return Err(Error::NonFinite { context: "episode reward", index: i });
        }
        Ok(())
    }
}

/// Turns an episode into n-step transitions. For each `t`, `k = min(n, T − t)`,
/// the reward is `Σ_{j<k} γʲ r_{t+j}`, and the bootstrap discount is `γᵏ`
/// unless `s_{t+k}` is a true terminal state. Time-limit truncation keeps
/// the bootstrap.
pub fn compute_nstep(episode: &Episode, n: usize, gamma: f64) -> Result<Vec<Transition>> {
    if episode.is_empty() {
        return Err(Error::Contract("empty episode".into()));
    }
    if n == 0 {
        return Err(Error::Config("n_step must be at least 1".into()));
    }
    episode.validate()?;
    let len = episode.len();
    let mut out = Vec::with_capacity(len);
    for t in 0..len {
        let k = n.min(len - t);
        let mut reward = 0.0;
        let mut discount = 1.0;
        for j in 0..k {
            reward += discount * episode.rewards[t + j];
            discount *= gamma;
        }
        let done = episode.terminal && t + k == len;
        out.push(Transition {
            episode_tag: episode.tag,
            step: t as u32,
            state: episode.state(t).to_vec(),
            action: episode.action(t).to_vec(),
            n_step_reward: reward,
            next_state: episode.state(t + k).to_vec(),
            discount_pow: if done { 0.0 } else { discount },
            done,
        });
    }
    Ok(out)
}

/// Converts stored transitions to the learner's full-precision batch.
pub fn to_update_batch(transitions: &[Transition]) -> Result<UpdateBatch> {
    let first = transitions
        .first()
        .ok_or_else(|| Error::Contract("cannot build a batch from no transitions".into()))?;
    let (obs, act) = (first.state.len(), first.action.len());
    let b = transitions.len();
    let mut states = Vec::with_capacity(b * obs);
    let mut actions = Vec::with_capacity(b * act);
    let mut next_states = Vec::with_capacity(b * obs);
    for (i, t) in transitions.iter().enumerate() {
        if t.state.len() != obs || t.next_state.len() != obs || t.action.len() != act {
            return Err(Error::dim(format!("transition {i} width"), obs, t.state.len()));
        }
        states.extend(t.state.iter().map(|&v| v as f64));
        actions.extend(t.action.iter().map(|&v| v as f64));
        next_states.extend(t.next_state.iter().map(|&v| v as f64));
    }
    Ok(UpdateBatch {
        states: Tensor2::new(b, obs, states)?,
        actions: Tensor2::new(b, act, actions)?,
        rewards: transitions.iter().map(|t| t.n_step_reward).collect(),
        next_states: Tensor2::new(b, obs, next_states)?,
        dones: transitions.iter().map(|t| t.done).collect(),
        discount_pows: transitions.iter().map(|t| t.discount_pow).collect(),
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PushStats {
    pub size: usize,
    pub total_pushed: u64,
    pub evicted: usize,
}

/// Fixed-capacity FIFO ring of transitions.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    /// Slot the next push overwrites once the ring is full.
    cursor: usize,
    total_pushed: u64,
    dims: Option<(usize, usize)>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be positive".into()));
        }
        Ok(ReplayBuffer {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            cursor: 0,
            total_pushed: 0,
            dims: None,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn total_pushed(&self) -> u64 {
        self.total_pushed
    }

    /// `(state width, action width)` fixed by the first insertion.
    pub fn dims(&self) -> Option<(usize, usize)> {
        self.dims
    }

    /// Appends all transitions or none: a width mismatch anywhere rejects
    /// the whole batch.
    pub fn push(&mut self, transitions: Vec<Transition>) -> Result<PushStats> {
        let Some(first) = transitions.first() else {
            return Ok(self.stats(0));
        };
        let dims = self.dims.unwrap_or((first.state.len(), first.action.len()));
        for (i, t) in transitions.iter().enumerate() {
            if t.state.len() != dims.0 || t.next_state.len() != dims.0 || t.action.len() != dims.1 {
                return Err(Error::Contract(format!(
                    "transition {i} has widths (state {}, action {}) but the buffer holds ({}, {})",
                    t.state.len(),
                    t.action.len(),
                    dims.0,
                    dims.1
                )));
            }
        }
        self.dims = Some(dims);
        let mut evicted = 0;
        for t in transitions {
            if self.items.len() < self.capacity {
                self.items.push(t);
            } else {
                self.items[self.cursor] = t;
                self.cursor = (self.cursor + 1) % self.capacity;
                evicted += 1;
            }
            self.total_pushed += 1;
        }
        Ok(self.stats(evicted))
    }

    fn stats(&self, evicted: usize) -> PushStats {
        PushStats {
            size: self.items.len(),
            total_pushed: self.total_pushed,
            evicted,
        }
    }

    /// Slot the next push overwrites once the buffer is full.
    pub fn cursor(&self) -> usize {
        self.cursor
    }

    /// Restores the physical slot order of a full buffer that was reloaded
    /// oldest-first, so index-based sampling continues exactly.
    pub fn restore_cursor(&mut self, cursor: usize) -> Result<()> {
        if cursor == self.cursor {
            return Ok(());
        }
        if self.items.len() != self.capacity || cursor >= self.capacity || self.cursor != 0 {
            return Err(Error::Contract(format!(
                "cursor {cursor} does not fit a buffer holding {} of {}",
                self.items.len(),
                self.capacity
            )));
        }
        self.items.rotate_right(cursor);
        self.cursor = cursor;
        Ok(())
    }

    /// Oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let (newer, older) = self.items.split_at(self.cursor);
        older.iter().chain(newer)
    }

    /// I.i.d. uniform indices with replacement. Any non-empty buffer can
    /// serve any batch size; warm-up gating lives in [`SharedReplay::sample`].
    pub fn sample_indices<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<usize>> {
        if self.items.is_empty() {
            return Err(Error::NotReady { have: 0, need: 1 });
        }
        Ok((0..batch_size).map(|_| rng.random_range(0..self.items.len())).collect())
    }

    pub fn sample_transitions<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<Transition>> {
        let idx = self.sample_indices(batch_size, rng)?;
        Ok(idx.into_iter().map(|i| self.items[i].clone()).collect())
    }

    pub fn sample_uniform<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<UpdateBatch> {
        to_update_batch(&self.sample_transitions(batch_size, rng)?)
    }

    /// Writes the buffer, oldest first, as a sequence of `SAMPLE_BATCH` frames.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        {
            let mut w = BufWriter::new(std::fs::File::create(&tmp)?);
            let all: Vec<&Transition> = self.iter().collect();
            for chunk in all.chunks(SAVE_CHUNK) {
                let msg = Message::SampleBatch(chunk.iter().map(|t| (*t).clone()).collect());
                w.write_all(&wire::encode_message(&msg))?;
            }
            w.flush()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    /// Reads a file written by [`ReplayBuffer::save`] into a new buffer.
    pub fn load(path: &Path, capacity: usize) -> Result<Self> {
        Self::read_from(BufReader::new(std::fs::File::open(path)?), capacity)
    }

    /// Decodes the saved record stream from any reader.
    pub fn read_from(mut r: impl Read, capacity: usize) -> Result<Self> {
        let mut buf = ReplayBuffer::new(capacity)?;
        loop {
            match wire::read_message(&mut r) {
                Ok(Message::SampleBatch(ts)) => {
                    buf.push(ts)?;
                }
                Ok(other) => {
                    return Err(Error::Format(format!(
                        "unexpected {:?} record in replay file",
                        other.msg_type()
                    )))
                }
                Err(WireError::Closed) => break,
                Err(e) => return Err(Error::Format(e.to_string())),
            }
        }
        Ok(buf)
    }
}

const SAVE_CHUNK: usize = 4096;

/// A replay buffer shared between concurrent producers and consumers.
/// Pushes are atomic per call; a sample sees one consistent snapshot.
#[derive(Clone, Debug)]
pub struct SharedReplay {
    inner: Arc<RwLock<ReplayBuffer>>,
    sampled: Arc<AtomicU64>,
}

impl SharedReplay {
    pub fn new(buffer: ReplayBuffer) -> Self {
        SharedReplay {
            inner: Arc::new(RwLock::new(buffer)),
            sampled: Arc::new(AtomicU64::new(0)),
        }
    }

    pub fn push(&self, transitions: Vec<Transition>) -> Result<PushStats> {
        self.inner.write().expect("replay lock poisoned").push(transitions)
    }

    /// Samples once at least `max(batch_size, warm_up)` transitions are stored.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        batch_size: usize,
        warm_up: usize,
        rng: &mut R,
    ) -> Result<Vec<Transition>> {
        let buf = self.inner.read().expect("replay lock poisoned");
        let need = batch_size.max(warm_up);
        if buf.len() < need {
            return Err(Error::NotReady { have: buf.len(), need });
        }
        let out = buf.sample_transitions(batch_size, rng)?;
        self.sampled.fetch_add(out.len() as u64, Ordering::Relaxed);
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.inner.read().expect("replay lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn capacity(&self) -> usize {
        self.inner.read().expect("replay lock poisoned").capacity()
    }

    pub fn total_pushed(&self) -> u64 {
        self.inner.read().expect("replay lock poisoned").total_pushed()
    }

    pub fn total_sampled(&self) -> u64 {
        self.sampled.load(Ordering::Relaxed)
    }

    /// Runs `f` with shared read access to the underlying buffer.
    pub fn with_buffer<T>(&self, f: impl FnOnce(&ReplayBuffer) -> T) -> T {
        f(&self.inner.read().expect("replay lock poisoned"))
    }
}
