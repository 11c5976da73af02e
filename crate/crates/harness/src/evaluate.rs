//! Noise-free policy evaluation from a saved actor.

use std::path::Path;

use crl_core::algorithms::{ActMode, ActionBounds, AlgoKind, Policy};
use crl_core::checkpoint::load_params;
use crl_core::envs::make_env;
use crl_core::mlp::MlpParams;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{HarnessError, Result};
use crate::run::rollout;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub returns: Vec<f64>,
}

/// Builds a policy for `env_name` from an actor. A stochastic (SAC) actor is
/// recognised by its output width of twice the action dimension.
pub fn policy_for_env(actor: MlpParams, env_name: &str) -> Result<Policy> {
    let env = make_env(env_name)?;
    let spec = env.spec();
    let (inp, out) = (actor.layout().input_dim(), actor.layout().output_dim());
    let kind = if inp != spec.obs_dim {
        None
    } else if out == spec.action_dim {
        Some(AlgoKind::Td3)
    } else if out == 2 * spec.action_dim {
        Some(AlgoKind::Sac)
    } else {
        None
    };
    let kind = kind.ok_or_else(|| {
        HarnessError::Checkpoint(format!(
            "checkpoint actor maps {inp} observations to {out} outputs, but {} has {} observations and {} actions",
            spec.name, spec.obs_dim, spec.action_dim
        ))
    })?;
    Ok(Policy {
        kind,
        actor,
        bounds: ActionBounds::new(spec.action_low.clone(), spec.action_high.clone())?,
        exploration_sigma: 0.0,
    })
}

/// Rolls out `episodes` deterministic episodes; episode `i` resets with
/// seed `seed + i`.
pub fn evaluate_policy(policy: &Policy, env_name: &str, episodes: u64, seed: u64) -> Result<EvalReport> {
    if episodes == 0 {
        return Err(HarnessError::Config("evaluation needs at least one episode".into()));
    }
    let mut env = make_env(env_name)?;
    let mut unused = ChaCha8Rng::seed_from_u64(0);
    let returns = (0..episodes)
        .map(|i| {
            rollout(
                env.as_mut(),
                |s| policy.act(s, ActMode::Eval, &mut unused),
                seed.wrapping_add(i),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    Ok(EvalReport {
        mean,
        std: var.sqrt(),
        returns,
    })
}

/// Evaluates the actor in `checkpoint`, which is either a `.crlw` file or a
/// run directory containing `actor.crlw`.
pub fn evaluate(checkpoint: &Path, env_name: &str, episodes: u64, seed: u64) -> Result<EvalReport> {
    let file = if checkpoint.is_dir() {
        checkpoint.join("actor.crlw")
    } else {
        checkpoint.to_path_buf()
    };
    let actor = load_params(&file).map_err(|e| HarnessError::Checkpoint(format!("{}: {e}", file.display())))?;
    evaluate_policy(&policy_for_env(actor, env_name)?, env_name, episodes, seed)
}
