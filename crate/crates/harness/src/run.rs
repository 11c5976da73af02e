//! In-process training: one environment, one learner, one replay buffer.
//!
//! Transitions enter the buffer when their episode ends. Until the buffer
//! holds `replay.warm_up` transitions actions are uniform random and no
//! updates run; afterwards every environment step is followed by one update.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Instant;

use crl_core::algorithms::{ActMode, ActionBounds, Agent, Losses};
use crl_core::envs::{make_env, Env};
use crl_core::replay::{compute_nstep, Episode, ReplayBuffer};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::metrics::{MetricsRow, MetricsWriter};
use crate::snapshot::{self, Manifest};

/// Mixed into the environment seed for the run's own random stream.
const RUN_STREAM: u64 = 1;
/// Evaluation episodes draw reset seeds from this stream.
const EVAL_STREAM: u64 = 2;

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Where checkpoints go; `None` disables them.
    pub checkpoint_dir: Option<PathBuf>,
    /// Defaults to `<env>-<algorithm>-s<seed>-<first 8 setup hash digits>`.
    pub run_id: Option<String>,
    pub metrics: Option<PathBuf>,
    /// Continue from an existing checkpoint of the same run if there is one.
    pub resume: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunOutcome {
    pub episodes: u64,
    pub env_steps: u64,
    pub updates: u64,
    /// Training returns of the whole run, including resumed segments.
    pub returns: Vec<f64>,
    pub eval_returns: Vec<f64>,
    pub checkpoints: u64,
    pub resumed: bool,
    /// Stopped by the stop flag before the budget ran out.
    pub interrupted: bool,
    pub run_dir: Option<PathBuf>,
}

pub fn default_run_id(cfg: &ExperimentConfig) -> String {
    format!(
        "{}-{}-s{}-{}",
        cfg.env.name,
        cfg.algo_config().kind.name(),
        cfg.env.seed,
        &cfg.setup_hash()[..8]
    )
}

/// Mutable state of an in-process run.
pub struct LocalRun {
    pub cfg: ExperimentConfig,
    pub agent: Agent,
    pub replay: ReplayBuffer,
    env: Box<dyn Env>,
    bounds: ActionBounds,
    rng: ChaCha8Rng,
    pub episodes: u64,
    pub env_steps: u64,
    pub eval_rounds: u64,
    pub returns: Vec<f64>,
    /// Wall time accumulated by earlier segments of a resumed run.
    elapsed_before: f64,
    last_losses: Option<Losses>,
    last_actor_loss: Option<f64>,
    hash: String,
}

impl LocalRun {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let env = make_env(&cfg.env.name)?;
        let spec = env.spec().clone();
        let bounds = ActionBounds::new(spec.action_low.clone(), spec.action_high.clone())?;
        let agent = Agent::new(cfg.algo_config(), spec.obs_dim, bounds.clone(), cfg.env.seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.env.seed);
        rng.set_stream(RUN_STREAM);
        Ok(LocalRun {
            cfg: cfg.clone(),
            agent,
            replay: ReplayBuffer::new(cfg.replay.capacity)?,
            env,
            bounds,
            rng,
            episodes: 0,
            env_steps: 0,
            eval_rounds: 0,
            returns: Vec::new(),
            elapsed_before: 0.0,
            last_losses: None,
            last_actor_loss: None,
            hash: cfg.hash(),
        })
    }

    /// Rebuilds a run from the checkpoint in `dir`.
    pub fn restore(cfg: &ExperimentConfig, dir: &Path) -> Result<Self> {
        let m = snapshot::read_manifest(dir)?
            .ok_or_else(|| HarnessError::Checkpoint(format!("no manifest in {}", dir.display())))?;
        let mut run = LocalRun::new(cfg)?;
        let saved = m.get("setup_hash")?;
        let current = cfg.setup_hash();
        if saved != current {
            return Err(HarnessError::Checkpoint(format!(
                "{} was written for setup {saved}, current setup is {current}",
                dir.display()
            )));
        }
        snapshot::load_agent(dir, &mut run.agent, &m)?;
        let mut replay = ReplayBuffer::load(&dir.join(snapshot::REPLAY_FILE), cfg.replay.capacity)?;
        replay.restore_cursor(m.parse("replay.cursor")?)?;
        if replay.len() != m.parse::<usize>("replay.len")? {
            return Err(HarnessError::Checkpoint("replay file does not match the manifest".into()));
        }
        run.replay = replay;
        run.rng = m.rng("run.rng")?;
        run.episodes = m.parse("episodes")?;
        run.env_steps = m.parse("env_steps")?;
        run.eval_rounds = m.parse("eval_rounds")?;
        run.elapsed_before = m.parse("wall_time_s")?;
        run.returns = snapshot::read_returns(dir)?;
        if run.returns.len() as u64 != run.episodes {
            return Err(HarnessError::Checkpoint("returns file does not match the episode count".into()));
        }
        Ok(run)
    }

    pub fn save(&self, dir: &Path, wall_time_s: f64) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        crl_core::checkpoint::write_atomic(&dir.join(snapshot::CONFIG_FILE), self.cfg.dump().as_bytes())?;
        let mut m = Manifest::default();
        snapshot::save_agent(dir, &self.agent, &mut m)?;
        self.replay.save(&dir.join(snapshot::REPLAY_FILE))?;
        snapshot::write_returns(dir, &self.returns)?;
        m.set("config_hash", &self.hash);
        m.set("setup_hash", self.cfg.setup_hash());
        m.set("episodes", self.episodes);
        m.set("env_steps", self.env_steps);
        m.set("eval_rounds", self.eval_rounds);
        m.set("wall_time_s", wall_time_s);
        m.set("replay.len", self.replay.len());
        m.set("replay.cursor", self.replay.cursor());
        m.set_rng("run.rng", &self.rng);
        snapshot::write_manifest(dir, &m)
    }

    fn warm(&self) -> bool {
        self.replay.len() >= self.cfg.warm_up().max(self.cfg.algorithm.batch_size)
    }

    /// One training episode. Returns its total reward.
    pub fn train_episode(&mut self) -> Result<f64> {
        let obs = self.env.reset(self.rng.next_u64());
        let mut episode = Episode::new(self.episodes, &obs, self.bounds.dim());
        let mut state: Vec<f64> = obs.iter().map(|&v| v as f64).collect();
        loop {
            let action = if self.warm() {
                self.agent.act(&state, ActMode::Train, &mut self.rng)?
            } else {
                (0..self.bounds.dim())
                    .map(|k| self.rng.random_range(self.bounds.low()[k]..=self.bounds.high()[k]))
                    .collect()
            };
            let step = self.env.step(&action)?;
            self.env_steps += 1;
            let stored: Vec<f32> = action.iter().map(|&v| v as f32).collect();
            episode.push(&stored, step.reward, &step.obs)?;
            state = step.obs.iter().map(|&v| v as f64).collect();
            if self.warm() {
                let batch = self.replay.sample_uniform(self.cfg.algorithm.batch_size, &mut self.rng)?;
                let losses = self.agent.update(&batch)?;
                if losses.actor.is_some() {
                    self.last_actor_loss = losses.actor;
                }
                self.last_losses = Some(losses);
            }
            if step.done || step.truncated {
                episode.terminal = step.done;
                break;
            }
        }
        let ret = episode.total_reward();
        self.replay
            .push(compute_nstep(&episode, self.cfg.replay.n_step, self.cfg.algorithm.gamma)?)?;
        self.episodes += 1;
        self.returns.push(ret);
        Ok(ret)
    }

    /// One round of noise-free evaluation episodes. Uses its own seed stream
    /// so training is unaffected by how often it runs.
    pub fn eval_round(&mut self) -> Result<Vec<f64>> {
        let n = self.cfg.run.eval_episodes;
        let mut seeds = ChaCha8Rng::seed_from_u64(self.cfg.env.seed);
        seeds.set_stream(EVAL_STREAM);
        seeds.set_word_pos(u128::from(self.eval_rounds * n) * 2);
        let policy = self.agent.policy();
        // Evaluation actions are deterministic; this stream is never drawn from.
        let mut unused = ChaCha8Rng::seed_from_u64(0);
        let mut out = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let seed = seeds.next_u64();
            out.push(rollout(self.env.as_mut(), |s| policy.act(s, ActMode::Eval, &mut unused), seed)?);
        }
        self.eval_rounds += 1;
        Ok(out)
    }

    fn row(&self, wall: f64, index: u64, ret: f64, mode: ActMode) -> MetricsRow {
        let l = self.last_losses.as_ref();
        MetricsRow {
            wall_time_s: wall,
            env_steps_total: self.env_steps,
            updates_total: self.agent.update_count,
            episode_index: Some(index),
            episode_return: Some(ret),
            weight_version: self.agent.update_count,
            critic1_loss: l.and_then(|l| l.critic.first().copied()),
            critic2_loss: l.and_then(|l| l.critic.get(1).copied()),
            actor_loss: self.last_actor_loss,
            mode: mode.name().into(),
            config_hash: self.hash.clone(),
        }
    }

    fn budget_spent(&self, wall: f64) -> bool {
        let r = &self.cfg.run;
        r.max_episodes.is_some_and(|m| self.episodes >= m)
            || r.max_env_steps.is_some_and(|m| self.env_steps >= m)
            || r.wall_clock_s.is_some_and(|m| wall >= m)
    }
}

/// Runs a policy for one episode from `seed` and returns the total reward.
pub fn rollout(
    env: &mut dyn Env,
    mut act: impl FnMut(&[f64]) -> crl_core::Result<Vec<f64>>,
    seed: u64,
) -> Result<f64> {
    let obs = env.reset(seed);
    let mut state: Vec<f64> = obs.iter().map(|&v| v as f64).collect();
    let mut total = 0.0;
    loop {
        let step = env.step(&act(&state)?)?;
        total += step.reward;
        state = step.obs.iter().map(|&v| v as f64).collect();
        if step.done || step.truncated {
            return Ok(total);
        }
    }
}

/// Trains until the configured budget is spent or `stop` is set. The stop
/// flag is honoured at episode boundaries; a final checkpoint is always
/// written when checkpointing is enabled.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions, stop: &AtomicBool) -> Result<RunOutcome> {
    let run_dir = opts
        .checkpoint_dir
        .as_ref()
        .map(|d| d.join(opts.run_id.clone().unwrap_or_else(|| default_run_id(cfg))));
    let mut resumed = false;
    let mut run = match &run_dir {
        Some(dir) if opts.resume && snapshot::read_manifest(dir)?.is_some() => {
            resumed = true;
            log::info!("resuming from {}", dir.display());
            LocalRun::restore(cfg, dir)?
        }
        _ => LocalRun::new(cfg)?,
    };
    if let Some(dir) = &run_dir {
        std::fs::create_dir_all(dir)?;
        crl_core::checkpoint::write_atomic(&dir.join(snapshot::CONFIG_FILE), cfg.dump().as_bytes())?;
    }
    let mut metrics = opts.metrics.as_deref().map(MetricsWriter::open).transpose()?;
    let started = Instant::now();
    let wall = |run: &LocalRun| run.elapsed_before + started.elapsed().as_secs_f64();
    let mut outcome = RunOutcome {
        resumed,
        run_dir: run_dir.clone(),
        ..RunOutcome::default()
    };
    let checkpoint = |run: &LocalRun, outcome: &mut RunOutcome| -> Result<()> {
        if let Some(dir) = &run_dir {
            run.save(dir, wall(run))?;
            outcome.checkpoints += 1;
        }
        Ok(())
    };

    while !run.budget_spent(wall(&run)) {
        if stop.load(Ordering::SeqCst) {
            outcome.interrupted = true;
            break;
        }
        let ret = run.train_episode()?;
        let index = run.episodes - 1;
        if let Some(w) = metrics.as_mut() {
            w.write(&run.row(wall(&run), index, ret, ActMode::Train))?;
        }
        let eval_period = run.cfg.run.eval_period;
        if eval_period > 0 && run.episodes % eval_period == 0 {
            for r in run.eval_round()? {
                outcome.eval_returns.push(r);
                if let Some(w) = metrics.as_mut() {
                    w.write(&run.row(wall(&run), index, r, ActMode::Eval))?;
                }
            }
        }
        if run.episodes % run.cfg.run.checkpoint_period == 0 {
            checkpoint(&run, &mut outcome)?;
        }
    }
    if run.episodes % run.cfg.run.checkpoint_period != 0 || outcome.checkpoints == 0 {
        checkpoint(&run, &mut outcome)?;
    }
    outcome.episodes = run.episodes;
    outcome.env_steps = run.env_steps;
    outcome.updates = run.agent.update_count;
    outcome.returns = run.returns;
    Ok(outcome)
}
