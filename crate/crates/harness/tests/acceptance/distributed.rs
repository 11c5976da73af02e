//! Criterion 7: a trainer behind the TCP hub matches an in-process one, a
//! multi-node deployment keeps every transition accounted for, and training
//! survives sampler crashes.

use std::collections::HashMap;
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use crl_core::algorithms::{ActionBounds, Agent, AlgoConfig, AlgoKind};
use crl_core::envs::Pendulum;
use crl_core::replay::Episode;
use crl_core::wire::{Message, PushEpisode};
use crl_net::hub::Session;
use crl_net::{
    run_sampler, HubConfig, HubHandle, HubState, LocalSource, RemoteSource, SamplerConfig,
    SamplerReport, Trainer, TrainerConfig,
};

use crate::common::Outcome;
use crate::ensure;

const BIN: &str = env!("CARGO_BIN_EXE_crl");
const EPISODE_LEN: usize = 200;
const SAMPLER_EPISODES: u64 = 5000;

fn small_agent(seed: u64) -> Agent {
    let mut cfg = AlgoConfig::new(AlgoKind::Td3);
    cfg.network.hidden = vec![32, 32];
    cfg.batch_size = 64;
    Agent::new(cfg, 3, ActionBounds::symmetric(2.0, 1).unwrap(), seed).unwrap()
}

fn hub_cfg(capacity: usize) -> HubConfig {
    HubConfig {
        capacity,
        warm_up: 1000,
        seed: 11,
        ..HubConfig::default()
    }
}

fn fill(hub: &HubState, episodes: u64) {
    let mut s = Session::default();
    for k in 0..episodes {
        let mut e = Episode::new(k, &[0.1, 0.2, 0.3], 1);
        for t in 0..100 {
            let x = (k * 100 + t) as f32 * 1e-3;
            e.push(&[x.sin()], -(x as f64), &[x.cos(), x.sin(), x]).unwrap();
        }
        let msg = Message::PushEpisode(PushEpisode {
            source_id: 1,
            eval: false,
            weight_version: 0,
            episode_return: 0.0,
            episode: e,
        });
        assert!(matches!(hub.handle(msg, &mut s), Message::Stats(_)));
    }
}

/// (a) Same seed, same buffer contents: 100 updates over loopback TCP leave
/// every parameter bit-identical to the in-process trainer.
fn equivalence() -> Result<(), String> {
    let stop = AtomicBool::new(false);
    let local_hub = Arc::new(HubState::new(hub_cfg(100_000)).map_err(|e| e.to_string())?);
    fill(&local_hub, 20);
    let remote_hub = Arc::new(HubState::new(hub_cfg(100_000)).map_err(|e| e.to_string())?);
    fill(&remote_hub, 20);
    let handle = HubHandle::bind("127.0.0.1:0", remote_hub).map_err(|e| e.to_string())?;
    let cfg = TrainerConfig {
        publish_period: 10,
        publisher: true,
        max_updates: Some(100),
    };
    let mut a = Trainer::new(small_agent(3), cfg.clone());
    let mut b = Trainer::new(small_agent(3), cfg);
    let mut local = LocalSource::new(local_hub, true);
    let mut remote = RemoteSource::new(handle.local_addr().to_string(), 1, true);
    a.run(&mut local, &stop, |_, _| {}).map_err(|e| e.to_string())?;
    b.run(&mut remote, &stop, |_, _| {}).map_err(|e| e.to_string())?;
    ensure!(a.agent.update_count == 100 && b.agent.update_count == 100, "trainers stopped early");
    ensure!(a.agent.nets == b.agent.nets, "parameters diverged between local and remote trainers");
    ensure!(handle.state().stats().protocol_errors == 0, "protocol errors on the loopback hub");
    handle.shutdown();
    Ok(())
}

struct Deployment {
    episodes: u64,
    transitions: u64,
    updates: [u64; 2],
    versions: u64,
}

/// (b) Two samplers, one hub and two trainers (one publishing) for 60 s.
fn deployment() -> Result<Deployment, String> {
    let hub = Arc::new(HubState::new(hub_cfg(2_000_000)).map_err(|e| e.to_string())?);
    let handle = HubHandle::bind("127.0.0.1:0", hub.clone()).map_err(|e| e.to_string())?;
    let addr = handle.local_addr().to_string();
    let stop = Arc::new(AtomicBool::new(false));

    let samplers: Vec<_> = (1..=2u64)
        .map(|id| {
            let (stop, addr) = (stop.clone(), addr.clone());
            thread::spawn(move || -> crl_net::Result<SamplerReport> {
                let mut env = Pendulum::new();
                let mut cfg = SamplerConfig::new(id, addr);
                // Keeps the whole stream resident so the census is exact.
                cfg.max_episodes = Some(SAMPLER_EPISODES);
                run_sampler(&cfg, &mut env, &stop)
            })
        })
        .collect();
    let trainers: Vec<_> = [(10u64, true), (11, false)]
        .into_iter()
        .map(|(id, publisher)| {
            let (stop, addr) = (stop.clone(), addr.clone());
            thread::spawn(move || -> crl_net::Result<(u64, u64)> {
                let cfg = TrainerConfig {
                    publish_period: 50,
                    publisher,
                    max_updates: None,
                };
                let mut t = Trainer::new(small_agent(id), cfg);
                let mut src = RemoteSource::new(addr, id, publisher);
                let n = t.run(&mut src, &stop, |_, _| {})?;
                Ok((n, t.weight_version))
            })
        })
        .collect();

    thread::sleep(Duration::from_secs(60));
    stop.store(true, Ordering::SeqCst);
    let reports = samplers
        .into_iter()
        .map(|h| h.join().expect("sampler thread").map_err(|e| e.to_string()))
        .collect::<Result<Vec<_>, _>>()?;
    let trained = trainers
        .into_iter()
        .map(|h| h.join().expect("trainer thread").map_err(|e| e.to_string()))
        .collect::<Result<Vec<_>, _>>()?;
    let stats = hub.stats();
    handle.shutdown();

    ensure!(stats.protocol_errors == 0, "{} protocol errors", stats.protocol_errors);
    for (k, r) in reports.iter().enumerate() {
        let id = k as u64 + 1;
        ensure!(r.episodes_pushed > 0, "sampler {id} contributed nothing");
        ensure!(r.episodes_rejected == 0 && r.episodes_dropped == 0, "sampler {id} lost episodes: {r:?}");
        ensure!(r.versions.windows(2).all(|w| w[0] <= w[1]), "sampler {id} saw weight versions go backwards");
        let src = stats
            .sources
            .iter()
            .find(|s| s.source_id == id)
            .ok_or_else(|| format!("hub has no record of sampler {id}"))?;
        ensure!(
            src.episodes == r.episodes_pushed && src.transitions == r.transitions_pushed,
            "sampler {id} reports {} episodes / {} transitions, hub counted {} / {}",
            r.episodes_pushed,
            r.transitions_pushed,
            src.episodes,
            src.transitions
        );
    }
    let pushed: u64 = reports.iter().map(|r| r.transitions_pushed).sum();
    ensure!(stats.size == pushed, "buffer holds {} of {pushed} pushed transitions", stats.size);
    // Every pushed episode tag owns exactly one full episode of transitions.
    let mut census: HashMap<u64, usize> = HashMap::new();
    hub.replay().with_buffer(|b| {
        for t in b.iter() {
            *census.entry(t.episode_tag).or_default() += 1;
        }
    });
    let tags: Vec<u64> = reports.iter().flat_map(|r| r.pushed_tags.iter().copied()).collect();
    ensure!(census.len() == tags.len(), "{} tags in the buffer, {} pushed", census.len(), tags.len());
    for tag in &tags {
        let n = census.get(tag).copied().unwrap_or(0);
        ensure!(n == EPISODE_LEN, "tag {tag:#x} has {n} transitions");
    }
    let (publisher_updates, publisher_version) = trained[0];
    ensure!(trained.iter().all(|(n, _)| *n > 0), "a trainer made no updates: {trained:?}");
    ensure!(
        publisher_version == stats.weight_version && publisher_version == publisher_updates / 50,
        "hub holds version {} but the publisher reached {publisher_version} after {publisher_updates} updates",
        stats.weight_version
    );
    Ok(Deployment {
        episodes: reports.iter().map(|r| r.episodes_pushed).sum(),
        transitions: pushed,
        updates: [trained[0].0, trained[1].0],
        versions: publisher_version,
    })
}

fn spawn_sampler(config: &std::path::Path, addr: &str, node_id: u64) -> Result<Child, String> {
    Command::new(BIN)
        .args(["sampler", "--config", &config.display().to_string(), "--hub", addr])
        .args(["--node-id", &node_id.to_string()])
        .env("RUST_LOG", "error")
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .map_err(|e| format!("spawn sampler: {e}"))
}

/// (c) Sampler processes are SIGKILLed and replaced while a trainer runs;
/// the trainer must make progress in every 2 s window.
fn churn() -> Result<(u64, usize), String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = dir.path().join("churn.yaml");
    std::fs::write(
        &config,
        "env: pendulum\nalgorithm: {kind: td3, batch_size: 64}\nnetwork: {hidden: [32, 32]}\nreplay: {warm_up: 1000}\n",
    )
    .map_err(|e| e.to_string())?;
    let hub = Arc::new(HubState::new(hub_cfg(1_000_000)).map_err(|e| e.to_string())?);
    let handle = HubHandle::bind("127.0.0.1:0", hub.clone()).map_err(|e| e.to_string())?;
    let addr = handle.local_addr().to_string();
    let stop = Arc::new(AtomicBool::new(false));
    let updates = Arc::new(AtomicU64::new(0));

    let mut next_id = 100u64;
    let mut children = Vec::new();
    for _ in 0..2 {
        children.push(spawn_sampler(&config, &addr, next_id)?);
        next_id += 1;
    }
    // Let the buffer warm up before the trainer and the clock start.
    let started = Instant::now();
    while hub.replay().len() < 1000 {
        if started.elapsed() > Duration::from_secs(30) {
            children.iter_mut().for_each(|c| drop(c.kill()));
            return Err("samplers never filled the warm-up".into());
        }
        thread::sleep(Duration::from_millis(50));
    }
    let trainer = {
        let (stop, addr, updates) = (stop.clone(), addr.clone(), updates.clone());
        thread::spawn(move || -> crl_net::Result<u64> {
            let cfg = TrainerConfig {
                publish_period: 50,
                publisher: true,
                max_updates: None,
            };
            let mut t = Trainer::new(small_agent(5), cfg);
            let mut src = RemoteSource::new(addr, 50, true);
            t.run(&mut src, &stop, |_, _| {
                updates.fetch_add(1, Ordering::Relaxed);
            })
        })
    };

    let mut windows = Vec::new();
    let mut kills = 0;
    let mut last = updates.load(Ordering::Relaxed);
    for w in 0..10 {
        if w % 2 == 1 {
            // Kill the oldest sampler mid-stream and start a fresh one.
            let mut victim = children.remove(0);
            victim.kill().map_err(|e| e.to_string())?;
            victim.wait().map_err(|e| e.to_string())?;
            kills += 1;
            children.push(spawn_sampler(&config, &addr, next_id)?);
            next_id += 1;
        }
        thread::sleep(Duration::from_secs(2));
        let now = updates.load(Ordering::Relaxed);
        windows.push(now - last);
        last = now;
    }
    stop.store(true, Ordering::SeqCst);
    for mut c in children {
        drop(c.kill());
        drop(c.wait());
    }
    let total = trainer.join().expect("trainer thread").map_err(|e| e.to_string())?;
    let stats = hub.stats();
    handle.shutdown();
    ensure!(windows.iter().all(|&n| n > 0), "trainer stalled in a window: {windows:?}");
    let late = stats.sources.iter().filter(|s| s.source_id >= 102 && s.episodes > 0).count();
    ensure!(late > 0, "no replacement sampler contributed an episode");
    Ok((total, kills))
}

pub fn check() -> Outcome {
    equivalence()?;
    let d = deployment()?;
    let (churn_updates, kills) = churn()?;
    Ok(format!(
        "100 remote updates bit-identical; 60 s deployment: {} episodes, {} transitions, updates {:?}, {} versions, 0 protocol errors; churn: {kills} kills, {churn_updates} updates, no stalled window",
        d.episodes, d.transitions, d.updates, d.versions
    ))
}
