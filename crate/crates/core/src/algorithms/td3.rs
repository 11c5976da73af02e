use rand::Rng;
use rand_distr::StandardNormal;

use super::ddpg::check_kind;
use super::heads::{squash_actions, ActionBounds};
use super::{ActorCriticSet, AlgoConfig, AlgoKind, CriticTargets, Losses, UpdateBatch};
use crate::error::Result;
use crate::mlp::MlpParams;
use crate::tensor::Tensor2;

/// Smoothed target action `clip(μ̃(s′) + h·clip(ε, −c, c))` with
/// `ε ~ N(0, σ²)` and `h` the per-coordinate action half-range; `sigma` and
/// `clip` are expressed in half-range units.
pub fn td3_target_action<R: Rng + ?Sized>(
    actor_target: &MlpParams,
    next_states: &Tensor2,
    bounds: &ActionBounds,
    sigma: f64,
    clip: f64,
    rng: &mut R,
) -> Result<Tensor2> {
    let raw = actor_target.forward(next_states, None)?;
    let mut actions = squash_actions(&raw, bounds);
    if sigma > 0.0 {
        let d = bounds.dim();
        for (i, a) in actions.data_mut().iter_mut().enumerate() {
            let k = i % d;
            let eps: f64 = rng.sample::<f64, _>(StandardNormal) * sigma;
            *a = bounds.clip(k, *a + bounds.half_range(k) * eps.clamp(-clip, clip));
        }
    }
    Ok(actions)
}

pub(crate) fn critic_targets<R: Rng + ?Sized>(
    nets: &ActorCriticSet,
    batch: &UpdateBatch,
    cfg: &AlgoConfig,
    rng: &mut R,
) -> Result<CriticTargets> {
    let next_actions = td3_target_action(
        nets.actor.target_or_online(),
        &batch.next_states,
        &nets.bounds,
        cfg.td3.smoothing_sigma,
        cfg.td3.noise_clip,
        rng,
    )?;
    let outs = nets
        .critics
        .iter()
        .map(|c| c.target_or_online().forward(&batch.next_states, Some(&next_actions)))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Tensor2> = outs.iter().collect();
    nets.head
        .build_targets(&batch.rewards, &batch.discount_pows, &refs, None)
}

/// Twin-critic regression towards the pessimistic smoothed target. The
/// actor and all target networks move only when `update_index` is a
/// multiple of the actor delay.
pub fn td3_update<R: Rng + ?Sized>(
    nets: &mut ActorCriticSet,
    batch: &UpdateBatch,
    cfg: &AlgoConfig,
    update_index: u64,
    rng: &mut R,
) -> Result<Losses> {
    check_kind(cfg, AlgoKind::Td3, nets)?;
    batch.validate(nets.obs_dim(), nets.act_dim())?;
    let targets = critic_targets(nets, batch, cfg, rng)?;
    let critic = nets.fit_critics(batch, &targets)?;
    let mut actor = None;
    if update_index % cfg.td3.actor_delay == 0 {
        let (loss, grads) = nets.deterministic_actor_loss(&batch.states)?;
        nets.actor.apply_gradient(&grads)?;
        nets.actor.soft_update(cfg.tau)?;
        for c in &mut nets.critics {
            c.soft_update(cfg.tau)?;
        }
        actor = Some(loss);
    }
    Ok(Losses { critic, actor })
}
