//! Criteria 5 and 6: short pendulum runs must clearly beat a uniform-random
//! policy.

use std::time::{Duration, Instant};

use crl_core::envs::make_env;
use crl_harness::load_config;
use crl_harness::run::{rollout, LocalRun};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::common::Outcome;

const EPISODES: u64 = 300;
const TAIL: usize = 20;
const SEED_BUDGET: Duration = Duration::from_secs(20 * 60);

/// Mean and population std of 100 uniform-random episodes.
fn random_baseline() -> Result<(f64, f64), String> {
    let mut env = make_env("pendulum").map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(5005);
    let returns = (0..100)
        .map(|i| rollout(env.as_mut(), |_| Ok(vec![rng.random_range(-2.0..=2.0)]), 10_000 + i))
        .collect::<Result<Vec<f64>, _>>()
        .map_err(|e| e.to_string())?;
    let mean = returns.iter().sum::<f64>() / returns.len() as f64;
    let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / returns.len() as f64;
    Ok((mean, var.sqrt()))
}

/// Trains one seed and returns the mean of the last 20 training returns.
fn train(algorithm: &str, seed: u64) -> Result<(f64, f64), String> {
    let text = format!(
        "env: {{name: pendulum, seed: {seed}}}\n\
         algorithm: {algorithm}\n\
         network: {{hidden: [64, 64]}}\n\
         run: {{max_episodes: {EPISODES}}}\n"
    );
    let cfg = load_config(&text).map_err(|e| e.to_string())?;
    let mut run = LocalRun::new(&cfg).map_err(|e| e.to_string())?;
    let started = Instant::now();
    for _ in 0..EPISODES {
        run.train_episode().map_err(|e| e.to_string())?;
        if started.elapsed() > SEED_BUDGET {
            return Err(format!("seed {seed} exceeded the 20 min budget after {} episodes", run.episodes));
        }
    }
    let tail = &run.returns[run.returns.len() - TAIL..];
    Ok((tail.iter().sum::<f64>() / TAIL as f64, started.elapsed().as_secs_f64()))
}

struct Arm {
    label: &'static str,
    algorithm: &'static str,
    quota: usize,
}

/// Runs seeds 0, 1, 2 per arm until the quota is met or can no longer be.
fn run_arms(arms: &[Arm]) -> Outcome {
    let (mean, std) = random_baseline()?;
    let bar = mean + 3.0 * std;
    let mut summary = vec![format!("random {mean:.0} ± {std:.0}, bar {bar:.0}")];
    let mut failures = Vec::new();
    for arm in arms {
        let mut passed = 0;
        let mut seen = Vec::new();
        for seed in 0..3u64 {
            let (score, secs) = train(arm.algorithm, seed)?;
            eprintln!("  {} seed {seed}: last-{TAIL} mean {score:.1} ({secs:.0}s)", arm.label);
            seen.push(format!("{score:.0}"));
            if score >= bar {
                passed += 1;
            }
            let left = 2 - seed as usize;
            if passed >= arm.quota || passed + left < arm.quota {
                break;
            }
        }
        summary.push(format!("{} {}/{} [{}]", arm.label, passed, arm.quota, seen.join(", ")));
        if passed < arm.quota {
            failures.push(arm.label);
        }
    }
    if failures.is_empty() {
        Ok(summary.join("; "))
    } else {
        Err(format!("below quota: {}; {}", failures.join(", "), summary.join("; ")))
    }
}

pub fn check_scalar() -> Outcome {
    run_arms(&[
        Arm { label: "td3", algorithm: "{kind: td3, batch_size: 128}", quota: 2 },
        Arm { label: "ddpg", algorithm: "{kind: ddpg, batch_size: 128}", quota: 1 },
        Arm {
            label: "sac",
            algorithm: "{kind: sac, batch_size: 128, sac: {reward_scale: 1}}",
            quota: 1,
        },
    ])
}

pub fn check_quantile() -> Outcome {
    run_arms(&[Arm {
        label: "td3-quantile",
        algorithm: "{kind: td3, batch_size: 128, distribution: {kind: quantile, n_atoms: 101, kappa: 1.0}}",
        quota: 2,
    }])
}
