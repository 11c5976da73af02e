use rand::Rng;

use super::ddpg::check_kind;
use super::heads::{ActionBounds, GaussianSample};
use super::{ActorCriticSet, AlgoConfig, AlgoKind, CriticTargets, Losses, UpdateBatch};
use crate::error::Result;
use crate::mlp::MlpParams;
use crate::tensor::Tensor2;
use rand_distr::StandardNormal;

/// Batched tanh-Gaussian action and its log-density.
pub fn sac_sample_action<R: Rng + ?Sized>(
    policy: &MlpParams,
    states: &Tensor2,
    bounds: &ActionBounds,
    deterministic: bool,
    rng: &mut R,
) -> Result<(Tensor2, Vec<f64>)> {
    let raw = policy.forward(states, None)?;
    let s = GaussianSample::sample(&raw, bounds, deterministic, rng)?;
    Ok((s.actions, s.log_probs))
}

/// `c·r + γᵏ (min_i Q̃_i(s′, a′) − log π(a′|s′))` with `a′` freshly sampled
/// from the current policy and `c` the reward scale.
pub(crate) fn critic_targets<R: Rng + ?Sized>(
    nets: &ActorCriticSet,
    batch: &UpdateBatch,
    cfg: &AlgoConfig,
    rng: &mut R,
) -> Result<CriticTargets> {
    let (next_actions, log_probs) =
        sac_sample_action(&nets.actor.online, &batch.next_states, &nets.bounds, false, rng)?;
    let outs = nets
        .critics
        .iter()
        .map(|c| c.target_or_online().forward(&batch.next_states, Some(&next_actions)))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Tensor2> = outs.iter().collect();
    let rewards: Vec<f64> = batch.rewards.iter().map(|r| r * cfg.sac.reward_scale).collect();
    let entropy: Vec<f64> = log_probs.iter().map(|lp| -lp).collect();
    nets.head
        .build_targets(&rewards, &batch.discount_pows, &refs, Some(&entropy))
}

pub fn sac_update<R: Rng + ?Sized>(
    nets: &mut ActorCriticSet,
    batch: &UpdateBatch,
    cfg: &AlgoConfig,
    rng: &mut R,
) -> Result<Losses> {
    check_kind(cfg, AlgoKind::Sac, nets)?;
    batch.validate(nets.obs_dim(), nets.act_dim())?;
    let targets = critic_targets(nets, batch, cfg, rng)?;
    let critic = nets.fit_critics(batch, &targets)?;
    let d = nets.act_dim();
    let noise = Tensor2::new(
        batch.len(),
        d,
        (0..batch.len() * d).map(|_| rng.sample(StandardNormal)).collect(),
    )?;
    let (actor_loss, grads) = nets.stochastic_actor_loss(&batch.states, noise)?;
    nets.actor.apply_gradient(&grads)?;
    for c in &mut nets.critics {
        c.soft_update(cfg.tau)?;
    }
    Ok(Losses {
        critic,
        actor: Some(actor_loss),
    })
}
