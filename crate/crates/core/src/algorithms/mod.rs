//! Off-policy actor-critic learners: DDPG, TD3 and SAC, each with a scalar,
//! categorical or quantile critic and n-step targets.

mod ddpg;
pub mod heads;
mod sac;
mod td3;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub use ddpg::ddpg_update;
pub use heads::{build_target_scalar, ActionBounds, CriticHead, CriticTargets, GaussianSample};
pub use sac::{sac_sample_action, sac_update};
pub use td3::{td3_target_action, td3_update};

use crate::adam::AdamState;
use crate::distributions::Support;
use crate::error::{Error, Result};
use crate::mlp::{MlpLayout, MlpParams};
use crate::tensor::Tensor2;

/// Output bound of the final actor layer at initialization.
pub const ACTOR_FINAL_INIT: f64 = 3e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AlgoKind {
    Ddpg,
    Td3,
    Sac,
}

impl AlgoKind {
    pub fn name(self) -> &'static str {
        match self {
            AlgoKind::Ddpg => "ddpg",
            AlgoKind::Td3 => "td3",
            AlgoKind::Sac => "sac",
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            AlgoKind::Ddpg => 0,
            AlgoKind::Td3 => 1,
            AlgoKind::Sac => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        [AlgoKind::Ddpg, AlgoKind::Td3, AlgoKind::Sac].into_iter().find(|k| k.tag() == tag)
    }

    pub fn critic_count(self) -> usize {
        match self {
            AlgoKind::Ddpg => 1,
            AlgoKind::Td3 | AlgoKind::Sac => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DistributionConfig {
    None,
    Categorical { v_min: f64, v_max: f64, n_atoms: usize },
    Quantile { n_atoms: usize, kappa: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Td3Params {
    /// Target smoothing noise std, in units of the action half-range.
    pub smoothing_sigma: f64,
    /// Target smoothing noise clip, in units of the action half-range.
    pub noise_clip: f64,
    pub actor_delay: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SacParams {
    pub reward_scale: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    pub hidden: Vec<usize>,
    pub layer_norm: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            hidden: vec![400, 300],
            layer_norm: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlgoConfig {
    pub kind: AlgoKind,
    pub gamma: f64,
    pub tau: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub batch_size: usize,
    pub n_step: usize,
    pub distribution: DistributionConfig,
    /// Behaviour noise std for DDPG/TD3, in units of the action half-range.
    pub exploration_sigma: f64,
    pub td3: Td3Params,
    pub sac: SacParams,
    pub network: NetworkConfig,
}

impl AlgoConfig {
    pub fn new(kind: AlgoKind) -> Self {
        AlgoConfig {
            kind,
            gamma: 0.99,
            tau: 1e-3,
            actor_lr: 1e-4,
            critic_lr: 1e-4,
            batch_size: 256,
            n_step: 1,
            distribution: DistributionConfig::None,
            exploration_sigma: 0.1,
            td3: Td3Params {
                smoothing_sigma: 0.2,
                noise_clip: 0.5,
                actor_delay: 1,
            },
            sac: SacParams { reward_scale: 150.0 },
            network: NetworkConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(what.to_string()));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma out of [0,1]");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau out of (0,1]");
        }
        if !(self.actor_lr > 0.0) || !(self.critic_lr > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.n_step == 0 {
            return bad("n_step must be at least 1");
        }
        if !(self.exploration_sigma >= 0.0) {
            return bad("exploration_sigma must be non-negative");
        }
        if !(self.td3.smoothing_sigma >= 0.0) || !(self.td3.noise_clip > 0.0) {
            return bad("td3 smoothing sigma must be >= 0 and noise clip > 0");
        }
        if self.td3.actor_delay == 0 {
            return bad("td3 actor_delay must be at least 1");
        }
        if !(self.sac.reward_scale > 0.0) {
            return bad("sac reward_scale must be positive");
        }
        if self.network.hidden.contains(&0) {
            return bad("hidden layer sizes must be positive");
        }
        self.critic_head().map(|_| ())
    }

    pub fn critic_head(&self) -> Result<CriticHead> {
        match self.distribution {
            DistributionConfig::None => Ok(CriticHead::Scalar),
            DistributionConfig::Categorical { v_min, v_max, n_atoms } => {
                Ok(CriticHead::Categorical(Support::new(v_min, v_max, n_atoms)?))
            }
            DistributionConfig::Quantile { n_atoms, kappa } => {
                if n_atoms == 0 {
                    return Err(Error::Config("quantile head needs at least one atom".into()));
                }
                if !(kappa > 0.0) {
                    return Err(Error::Config(format!("huber kappa must be positive, got {kappa}")));
                }
                Ok(CriticHead::Quantile { n_atoms, kappa })
            }
        }
    }

    pub fn actor_layout(&self, obs_dim: usize, act_dim: usize) -> MlpLayout {
        let out = match self.kind {
            AlgoKind::Sac => 2 * act_dim,
            _ => act_dim,
        };
        let mut sizes = vec![obs_dim];
        sizes.extend(&self.network.hidden);
        sizes.push(out);
        MlpLayout::new(sizes, self.network.layer_norm)
    }

    /// Critics take the action as input to their second layer (or the first,
    /// when there are no hidden layers).
    pub fn critic_layout(&self, obs_dim: usize, act_dim: usize) -> Result<MlpLayout> {
        let mut sizes = vec![obs_dim];
        sizes.extend(&self.network.hidden);
        sizes.push(self.critic_head()?.output_dim());
        let insert = usize::from(!self.network.hidden.is_empty());
        Ok(MlpLayout::new(sizes, self.network.layer_norm).with_action_input(insert, act_dim))
    }
}

/// A batch of n-step transitions, batch-major, at full precision.
#[derive(Clone, Debug, PartialEq)]
pub struct UpdateBatch {
    pub states: Tensor2,
    pub actions: Tensor2,
    pub rewards: Vec<f64>,
    pub next_states: Tensor2,
    pub dones: Vec<bool>,
    pub discount_pows: Vec<f64>,
}

impl UpdateBatch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn validate(&self, obs_dim: usize, act_dim: usize) -> Result<()> {
        let b = self.len();
        if b == 0 {
            return Err(Error::Contract("empty update batch".into()));
        }
        let rows = [
            ("states", self.states.rows()),
            ("actions", self.actions.rows()),
            ("next_states", self.next_states.rows()),
            ("dones", self.dones.len()),
            ("discount_pows", self.discount_pows.len()),
        ];
        for (name, n) in rows {
            if n != b {
                return Err(Error::dim(format!("batch {name}"), b, n));
            }
        }
        if self.states.cols() != obs_dim || self.next_states.cols() != obs_dim {
            return Err(Error::dim("batch state width", obs_dim, self.states.cols()));
        }
        if self.actions.cols() != act_dim {
            return Err(Error::dim("batch action width", act_dim, self.actions.cols()));
        }
        if let Some(i) = (0..b).find(|&i| self.dones[i] && self.discount_pows[i] != 0.0) {
            return Err(Error::Contract(format!("sample {i} is done but has non-zero discount")));
        }
        Ok(())
    }
}

/// One network with its optimizer and, when the algorithm uses one, a
/// slowly tracking target copy.
#[derive(Clone, Debug, PartialEq)]
pub struct Trainable {
    pub online: MlpParams,
    pub target: Option<MlpParams>,
    pub opt: AdamState,
}

impl Trainable {
    fn new(online: MlpParams, with_target: bool, lr: f64) -> Self {
        let opt = AdamState::new(online.len(), lr);
        let target = with_target.then(|| online.clone());
        Trainable { online, target, opt }
    }

    pub fn apply_gradient(&mut self, grads: &[f64]) -> Result<()> {
        self.opt.step(self.online.as_mut_slice(), grads)
    }

    pub fn soft_update(&mut self, tau: f64) -> Result<()> {
        match &mut self.target {
            Some(t) => t.soft_update_from(&self.online, tau),
            None => Ok(()),
        }
    }

    pub fn target_or_online(&self) -> &MlpParams {
        self.target.as_ref().unwrap_or(&self.online)
    }
}

/// All networks of one learner.
#[derive(Clone, Debug, PartialEq)]
pub struct ActorCriticSet {
    pub bounds: ActionBounds,
    pub head: CriticHead,
    pub actor: Trainable,
    /// One critic for DDPG, exactly two for TD3 and SAC.
    pub critics: Vec<Trainable>,
}

impl ActorCriticSet {
    pub fn new<R: Rng + ?Sized>(
        cfg: &AlgoConfig,
        obs_dim: usize,
        bounds: ActionBounds,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let act_dim = bounds.dim();
        let actor = MlpParams::init(cfg.actor_layout(obs_dim, act_dim), Some(ACTOR_FINAL_INIT), rng)?;
        let actor = Trainable::new(actor, cfg.kind != AlgoKind::Sac, cfg.actor_lr);
        let critic_layout = cfg.critic_layout(obs_dim, act_dim)?;
        let critics = (0..cfg.kind.critic_count())
            .map(|_| {
                MlpParams::init(critic_layout.clone(), None, rng)
                    .map(|p| Trainable::new(p, true, cfg.critic_lr))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ActorCriticSet {
            bounds,
            head: cfg.critic_head()?,
            actor,
            critics,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.actor.online.layout().input_dim()
    }

    pub fn act_dim(&self) -> usize {
        self.bounds.dim()
    }

    /// Fits every online critic one Adam step towards fixed targets and
    /// returns the per-critic loss measured before the step.
    pub fn fit_critics(&mut self, batch: &UpdateBatch, targets: &CriticTargets) -> Result<Vec<f64>> {
        let mut losses = Vec::with_capacity(self.critics.len());
        for k in 0..self.critics.len() {
            let (loss, grads) = self.critic_loss_grad(k, batch, targets)?;
            self.critics[k].apply_gradient(&grads)?;
            losses.push(loss);
        }
        Ok(losses)
    }

    /// Batch-mean loss of online critic `k` against `targets` and its
    /// gradient with respect to that critic's parameters.
    pub fn critic_loss_grad(
        &self,
        k: usize,
        batch: &UpdateBatch,
        targets: &CriticTargets,
    ) -> Result<(f64, Vec<f64>)> {
        let critic = &self.critics[k].online;
        let (out, cache) = critic.forward_cached(&batch.states, Some(&batch.actions))?;
        let (loss, grad) = self.head.loss(&out, targets)?;
        Ok((loss, critic.backward(&cache, &grad)?.params))
    }

    /// Q-values of critic `k` (online network).
    pub fn q_values(&self, k: usize, states: &Tensor2, actions: &Tensor2) -> Result<Vec<f64>> {
        let out = self.critics[k].online.forward(states, Some(actions))?;
        Ok(self.head.q_values(&out))
    }

    /// `−mean Q₁(s, a)` and its gradient with respect to `actions`, given
    /// the per-row critic outputs.
    fn negative_q_and_action_grad(&self, states: &Tensor2, actions: &Tensor2) -> Result<(f64, Tensor2)> {
        let critic = &self.critics[0].online;
        let (q_out, cache) = critic.forward_cached(states, Some(actions))?;
        let batch = states.rows();
        let mut upstream = Tensor2::zeros(batch, q_out.cols());
        let mut loss = 0.0;
        for i in 0..batch {
            loss -= self.head.q_value(q_out.row(i)) / batch as f64;
            for (u, g) in upstream.row_mut(i).iter_mut().zip(self.head.q_value_grad(q_out.row(i))) {
                *u = -g / batch as f64;
            }
        }
        let grads = critic.backward(&cache, &upstream)?;
        Ok((loss, grads.action.expect("critics take an action input")))
    }

    /// Deterministic actor objective `−mean Q₁(s, μ(s))` and its gradient
    /// with respect to the actor parameters.
    pub fn deterministic_actor_loss(&self, states: &Tensor2) -> Result<(f64, Vec<f64>)> {
        let (raw, cache) = self.actor.online.forward_cached(states, None)?;
        let actions = heads::squash_actions(&raw, &self.bounds);
        let (loss, d_action) = self.negative_q_and_action_grad(states, &actions)?;
        let d_raw = heads::squash_backward(&raw, &d_action, &self.bounds);
        Ok((loss, self.actor.online.backward(&cache, &d_raw)?.params))
    }

    /// Reparameterized SAC actor objective `mean(log π(a|s) − Q₁(s, a))`
    /// for fixed standard-normal `noise`, with its actor gradient.
    pub fn stochastic_actor_loss(&self, states: &Tensor2, noise: Tensor2) -> Result<(f64, Vec<f64>)> {
        let (raw, cache) = self.actor.online.forward_cached(states, None)?;
        let sample = GaussianSample::from_noise(&raw, noise, &self.bounds)?;
        let (neg_q, d_action) = self.negative_q_and_action_grad(states, &sample.actions)?;
        let batch = states.rows() as f64;
        let loss = neg_q + sample.log_probs.iter().sum::<f64>() / batch;
        let d_log_probs = vec![1.0 / batch; states.rows()];
        let d_raw = sample.backward(&d_action, &d_log_probs, &self.bounds);
        Ok((loss, self.actor.online.backward(&cache, &d_raw)?.params))
    }

    pub fn policy(&self, kind: AlgoKind, exploration_sigma: f64) -> Policy {
        Policy {
            kind,
            actor: self.actor.online.clone(),
            bounds: self.bounds.clone(),
            exploration_sigma,
        }
    }
}

/// Per-update losses, each measured before its optimizer step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Losses {
    pub critic: Vec<f64>,
    pub actor: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ActMode {
    Train,
    Eval,
}

impl ActMode {
    pub fn name(self) -> &'static str {
        match self {
            ActMode::Train => "train",
            ActMode::Eval => "eval",
        }
    }
}

/// A read-only copy of an actor, enough to select actions.
#[derive(Clone, Debug, PartialEq)]
pub struct Policy {
    pub kind: AlgoKind,
    pub actor: MlpParams,
    pub bounds: ActionBounds,
    pub exploration_sigma: f64,
}

impl Policy {
    pub fn act<R: Rng + ?Sized>(&self, state: &[f64], mode: ActMode, rng: &mut R) -> Result<Vec<f64>> {
        let obs = Tensor2::new(1, state.len(), state.to_vec())?;
        let raw = self.actor.forward(&obs, None)?;
        match self.kind {
            AlgoKind::Sac => {
                let s = GaussianSample::sample(&raw, &self.bounds, mode == ActMode::Eval, rng)?;
                Ok(s.actions.into_data())
            }
            AlgoKind::Ddpg | AlgoKind::Td3 => {
                let mut a = heads::squash_actions(&raw, &self.bounds).into_data();
                if mode == ActMode::Train && self.exploration_sigma > 0.0 {
                    for (k, v) in a.iter_mut().enumerate() {
                        let eps: f64 = rng.sample(StandardNormal);
                        let noise = eps * self.exploration_sigma * self.bounds.half_range(k);
                        *v = self.bounds.clip(k, *v + noise);
                    }
                }
                Ok(a)
            }
        }
    }
}

/// A learner: configuration, networks, update counter and the random stream
/// used inside updates (target smoothing, SAC sampling).
#[derive(Clone, Debug)]
pub struct Agent {
    pub cfg: AlgoConfig,
    pub nets: ActorCriticSet,
    pub update_count: u64,
    pub rng: ChaCha8Rng,
}

impl Agent {
    pub fn new(cfg: AlgoConfig, obs_dim: usize, bounds: ActionBounds, seed: u64) -> Result<Self> {
        let mut init_rng = ChaCha8Rng::seed_from_u64(seed);
        let nets = ActorCriticSet::new(&cfg, obs_dim, bounds, &mut init_rng)?;
        Ok(Agent {
            cfg,
            nets,
            update_count: 0,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_a9e47),
        })
    }

    /// One learning step on `batch`.
    pub fn update(&mut self, batch: &UpdateBatch) -> Result<Losses> {
        let idx = self.update_count;
        let losses = match self.cfg.kind {
            AlgoKind::Ddpg => ddpg_update(&mut self.nets, batch, &self.cfg),
            AlgoKind::Td3 => td3_update(&mut self.nets, batch, &self.cfg, idx, &mut self.rng),
            AlgoKind::Sac => sac_update(&mut self.nets, batch, &self.cfg, &mut self.rng),
        }?;
        self.update_count += 1;
        Ok(losses)
    }

    /// Critic regression targets for `batch` under the current networks.
    pub fn critic_targets(&mut self, batch: &UpdateBatch) -> Result<CriticTargets> {
        match self.cfg.kind {
            AlgoKind::Ddpg => ddpg::critic_targets(&self.nets, batch),
            AlgoKind::Td3 => td3::critic_targets(&self.nets, batch, &self.cfg, &mut self.rng),
            AlgoKind::Sac => sac::critic_targets(&self.nets, batch, &self.cfg, &mut self.rng),
        }
    }

    pub fn act<R: Rng + ?Sized>(&self, state: &[f64], mode: ActMode, rng: &mut R) -> Result<Vec<f64>> {
        self.policy().act(state, mode, rng)
    }

    /// Copy of the current actor for samplers.
    pub fn policy(&self) -> Policy {
        self.nets.policy(self.cfg.kind, self.cfg.exploration_sigma)
    }
}
