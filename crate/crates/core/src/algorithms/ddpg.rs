use super::heads::squash_actions;
use super::{ActorCriticSet, AlgoConfig, AlgoKind, CriticTargets, Losses, UpdateBatch};
use crate::error::{Error, Result};

/// `r + γᵏ · Q̃(s′, μ̃(s′))`, or its distributional counterpart.
pub(crate) fn critic_targets(nets: &ActorCriticSet, batch: &UpdateBatch) -> Result<CriticTargets> {
    let raw = nets.actor.target_or_online().forward(&batch.next_states, None)?;
    let next_actions = squash_actions(&raw, &nets.bounds);
    let out = nets.critics[0]
        .target_or_online()
        .forward(&batch.next_states, Some(&next_actions))?;
    nets.head
        .build_targets(&batch.rewards, &batch.discount_pows, &[&out], None)
}

pub(super) fn check_kind(cfg: &AlgoConfig, want: AlgoKind, nets: &ActorCriticSet) -> Result<()> {
    if cfg.kind != want {
        return Err(Error::Contract(format!(
            "{} update called with a {} configuration",
            want.name(),
            cfg.kind.name()
        )));
    }
    if nets.critics.len() != want.critic_count() {
        return Err(Error::Contract(format!(
            "{} needs {} critics, found {}",
            want.name(),
            want.critic_count(),
            nets.critics.len()
        )));
    }
    Ok(())
}

/// Critic regression, deterministic policy gradient through the updated
/// critic, then soft updates of the actor and critic targets.
pub fn ddpg_update(nets: &mut ActorCriticSet, batch: &UpdateBatch, cfg: &AlgoConfig) -> Result<Losses> {
    check_kind(cfg, AlgoKind::Ddpg, nets)?;
    batch.validate(nets.obs_dim(), nets.act_dim())?;
    let targets = critic_targets(nets, batch)?;
    let critic = nets.fit_critics(batch, &targets)?;
    let (actor_loss, grads) = nets.deterministic_actor_loss(&batch.states)?;
    nets.actor.apply_gradient(&grads)?;
    nets.actor.soft_update(cfg.tau)?;
    for c in &mut nets.critics {
        c.soft_update(cfg.tau)?;
    }
    Ok(Losses {
        critic,
        actor: Some(actor_loss),
    })
}
