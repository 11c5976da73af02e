//! The distributed roles, each hosted by its own process.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use crl_core::algorithms::{ActMode, ActionBounds, Agent};
use crl_core::envs::make_env;
use crl_net::{
    run_sampler_with, BatchSource, HubConfig, HubHandle, HubState, RemoteSource, SamplerConfig, SamplerReport,
    Trainer, TrainerConfig,
};

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::metrics::{MetricsRow, MetricsWriter};
use crate::snapshot::{self, Manifest};

pub fn hub_config(cfg: &ExperimentConfig) -> HubConfig {
    HubConfig {
        capacity: cfg.replay.capacity,
        warm_up: cfg.warm_up().max(cfg.algorithm.batch_size),
        n_step: cfg.replay.n_step,
        gamma: cfg.algorithm.gamma,
        store_eval: cfg.distributed.store_eval,
        seed: cfg.env.seed,
    }
}

/// Serves until `stop` is set, or until the wall-clock budget runs out.
pub fn serve_hub(cfg: &ExperimentConfig, addr: &str, stop: &AtomicBool) -> Result<crl_core::wire::HubStats> {
    let handle = HubHandle::bind(addr, Arc::new(HubState::new(hub_config(cfg))?))?;
    log::info!("hub listening on {}", handle.local_addr());
    let started = Instant::now();
    let limit = cfg.run.wall_clock_s.map(Duration::from_secs_f64);
    while !stop.load(Ordering::SeqCst) && limit.is_none_or(|l| started.elapsed() < l) {
        std::thread::sleep(Duration::from_millis(100));
    }
    let stats = handle.state().stats();
    handle.shutdown();
    Ok(stats)
}

#[derive(Clone, Debug)]
pub struct SamplerOptions {
    pub node_id: u64,
    pub hub: String,
    pub eval: bool,
    pub metrics: Option<PathBuf>,
}

pub fn run_sampler_role(cfg: &ExperimentConfig, opts: &SamplerOptions, stop: &AtomicBool) -> Result<SamplerReport> {
    let mut env = make_env(&cfg.env.name)?;
    let mut sc = SamplerConfig::new(opts.node_id, opts.hub.clone());
    sc.mode = if opts.eval { ActMode::Eval } else { ActMode::Train };
    sc.refresh_period = cfg.distributed.refresh_period;
    sc.exploration_sigma = cfg.algorithm.exploration_sigma;
    sc.seed = cfg.env.seed ^ opts.node_id.rotate_left(32);
    sc.max_episodes = cfg.run.max_episodes;
    let mut metrics = opts.metrics.as_deref().map(MetricsWriter::open).transpose()?;
    let hash = cfg.hash();
    let started = Instant::now();
    let mut steps = 0u64;
    let mut write_err = None;
    let limit = cfg.run.wall_clock_s;
    let max_steps = cfg.run.max_env_steps;
    let report = run_sampler_with(&sc, env.as_mut(), stop, |info| {
        steps += info.steps;
        if let Some(w) = metrics.as_mut() {
            let row = MetricsRow {
                wall_time_s: started.elapsed().as_secs_f64(),
                env_steps_total: steps,
                updates_total: 0,
                episode_index: Some(info.index),
                episode_return: Some(info.episode_return),
                weight_version: info.weight_version,
                critic1_loss: None,
                critic2_loss: None,
                actor_loss: None,
                mode: sc.mode.name().into(),
                config_hash: hash.clone(),
            };
            if let Err(e) = w.write(&row) {
                write_err.get_or_insert(e);
                return false;
            }
        }
        !(limit.is_some_and(|l| started.elapsed().as_secs_f64() >= l) || max_steps.is_some_and(|m| steps >= m))
    })?;
    match write_err {
        Some(e) => Err(e),
        None => Ok(report),
    }
}

#[derive(Clone, Debug)]
pub struct TrainerOptions {
    pub node_id: u64,
    pub hub: String,
    pub publisher: bool,
    pub metrics: Option<PathBuf>,
    /// Checkpoints go to `<dir>/<run-id>/`.
    pub checkpoint_dir: Option<PathBuf>,
    pub run_id: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainerOutcome {
    pub updates: u64,
    pub weight_version: u64,
    pub resumed: bool,
}

fn save_trainer(dir: &Path, t: &Trainer, setup_hash: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut m = Manifest::default();
    snapshot::save_agent(dir, &t.agent, &mut m)?;
    m.set("setup_hash", setup_hash);
    m.set("weight_version", t.weight_version);
    snapshot::write_manifest(dir, &m)
}

/// Pulls batches from a remote hub and publishes the actor, until the
/// update or wall-clock budget is spent or `stop` is set. Resumes from an
/// existing checkpoint of the same run.
pub fn run_trainer_role(cfg: &ExperimentConfig, opts: &TrainerOptions, stop: &AtomicBool) -> Result<TrainerOutcome> {
    let mut src = RemoteSource::new(opts.hub.clone(), opts.node_id, opts.publisher);
    run_trainer_on(cfg, opts, &mut src, stop)
}

pub fn run_trainer_on(
    cfg: &ExperimentConfig,
    opts: &TrainerOptions,
    source: &mut dyn BatchSource,
    stop: &AtomicBool,
) -> Result<TrainerOutcome> {
    let spec = crl_core::envs::env_spec(&cfg.env.name)?;
    let bounds = ActionBounds::new(spec.action_low.clone(), spec.action_high.clone())?;
    let agent = Agent::new(cfg.algo_config(), spec.obs_dim, bounds, cfg.env.seed ^ opts.node_id)?;
    let mut trainer = Trainer::new(
        agent,
        TrainerConfig {
            publish_period: cfg.distributed.publish_period,
            publisher: opts.publisher,
            max_updates: None,
        },
    );
    let hash = cfg.hash();
    let setup = cfg.setup_hash();
    let dir = opts.checkpoint_dir.as_ref().map(|d| {
        d.join(
            opts.run_id
                .clone()
                .unwrap_or_else(|| format!("{}-trainer{}", crate::run::default_run_id(cfg), opts.node_id)),
        )
    });
    let mut resumed = false;
    if let Some(d) = &dir {
        if let Some(m) = snapshot::read_manifest(d)? {
            if m.get("setup_hash")? != setup {
                return Err(crate::HarnessError::Checkpoint(format!(
                    "{} belongs to a different configuration",
                    d.display()
                )));
            }
            snapshot::load_agent(d, &mut trainer.agent, &m)?;
            trainer.weight_version = m.parse("weight_version")?;
            resumed = true;
        }
    }
    let mut metrics = opts.metrics.as_deref().map(MetricsWriter::open).transpose()?;
    let started = Instant::now();
    let max_updates = cfg.run.max_updates;
    let save_every = cfg.run.checkpoint_period * cfg.distributed.publish_period;
    let limit = cfg.run.wall_clock_s;
    loop {
        if stop.load(Ordering::SeqCst)
            || max_updates.is_some_and(|m| trainer.agent.update_count >= m)
            || limit.is_some_and(|l| started.elapsed().as_secs_f64() >= l)
        {
            break;
        }
        let before = trainer.weight_version;
        let Some(losses) = trainer.step(source, stop)? else { break };
        if trainer.weight_version != before {
            if let Some(w) = metrics.as_mut() {
                w.write(&MetricsRow {
                    wall_time_s: started.elapsed().as_secs_f64(),
                    env_steps_total: 0,
                    updates_total: trainer.agent.update_count,
                    episode_index: None,
                    episode_return: None,
                    weight_version: trainer.weight_version,
                    critic1_loss: losses.critic.first().copied(),
                    critic2_loss: losses.critic.get(1).copied(),
                    actor_loss: losses.actor,
                    mode: ActMode::Train.name().into(),
                    config_hash: hash.clone(),
                })?;
            }
        }
        if let Some(d) = &dir {
            if trainer.agent.update_count % save_every == 0 {
                save_trainer(d, &trainer, &setup)?;
            }
        }
    }
    if let Some(d) = &dir {
        save_trainer(d, &trainer, &setup)?;
    }
    Ok(TrainerOutcome {
        updates: trainer.agent.update_count,
        weight_version: trainer.weight_version,
        resumed,
    })
}
