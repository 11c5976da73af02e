//! Output heads: how raw network outputs become Q-values, critic losses,
//! bounded actions and tanh-Gaussian samples.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::distributions::{
    categorical_loss, categorical_mean, cramer_project_into, quantile_huber_loss, quantile_mean,
    softmax, Support,
};
use crate::error::{Error, Result};
use crate::tensor::Tensor2;

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
/// Added inside the log of the tanh change-of-variables term.
pub const TANH_EPS: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct ActionBounds {
    low: Vec<f64>,
    high: Vec<f64>,
}

impl ActionBounds {
    pub fn new(low: Vec<f64>, high: Vec<f64>) -> Result<Self> {
        if low.len() != high.len() || low.is_empty() {
            return Err(Error::dim("action bounds", low.len(), high.len()));
        }
        if let Some(i) = low.iter().zip(&high).position(|(l, h)| !(l < h)) {
            return Err(Error::Config(format!("action bound {i}: low must be below high")));
        }
        Ok(ActionBounds { low, high })
    }

    pub fn symmetric(limit: f64, dim: usize) -> Result<Self> {
        Self::new(vec![-limit; dim], vec![limit; dim])
    }

    pub fn dim(&self) -> usize {
        self.low.len()
    }

    pub fn low(&self) -> &[f64] {
        &self.low
    }

    pub fn high(&self) -> &[f64] {
        &self.high
    }

    pub fn center(&self, k: usize) -> f64 {
        0.5 * (self.low[k] + self.high[k])
    }

    pub fn half_range(&self, k: usize) -> f64 {
        0.5 * (self.high[k] - self.low[k])
    }

    pub fn clip(&self, k: usize, a: f64) -> f64 {
        a.clamp(self.low[k], self.high[k])
    }

    /// `center + half_range · tanh(x)` per coordinate.
    pub fn squash(&self, k: usize, x: f64) -> f64 {
        self.center(k) + self.half_range(k) * x.tanh()
    }
}

/// Deterministic actor output: bounded action per row.
pub fn squash_actions(raw: &Tensor2, bounds: &ActionBounds) -> Tensor2 {
    let mut out = raw.clone();
    let d = bounds.dim();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        *v = bounds.squash(i % d, *v);
    }
    out
}

/// Chain rule through [`squash_actions`].
pub fn squash_backward(raw: &Tensor2, d_action: &Tensor2, bounds: &ActionBounds) -> Tensor2 {
    let d = bounds.dim();
    let mut out = d_action.clone();
    for (i, (g, &x)) in out.data_mut().iter_mut().zip(raw.data()).enumerate() {
        let t = x.tanh();
        *g *= bounds.half_range(i % d) * (1.0 - t * t);
    }
    out
}

/// What a critic network emits per (state, action).
#[derive(Clone, Debug, PartialEq)]
pub enum CriticHead {
    Scalar,
    /// Logits over a fixed support.
    Categorical(Support),
    /// Learned atom positions with equal mass.
    Quantile { n_atoms: usize, kappa: f64 },
}

impl CriticHead {
    pub fn output_dim(&self) -> usize {
        match self {
            CriticHead::Scalar => 1,
            CriticHead::Categorical(s) => s.n_atoms(),
            CriticHead::Quantile { n_atoms, .. } => *n_atoms,
        }
    }

    /// Q-value (expected return) of one output row.
    pub fn q_value(&self, row: &[f64]) -> f64 {
        match self {
            CriticHead::Scalar => row[0],
            CriticHead::Categorical(s) => categorical_mean(s, &softmax(row)),
            CriticHead::Quantile { .. } => quantile_mean(row),
        }
    }

    pub fn q_values(&self, out: &Tensor2) -> Vec<f64> {
        (0..out.rows()).map(|i| self.q_value(out.row(i))).collect()
    }

    /// Gradient of `q_value` with respect to the output row.
    pub fn q_value_grad(&self, row: &[f64]) -> Vec<f64> {
        match self {
            CriticHead::Scalar => vec![1.0],
            CriticHead::Categorical(s) => {
                let p = softmax(row);
                let q = categorical_mean(s, &p);
                p.iter().zip(s.atoms()).map(|(p, z)| p * (z - q)).collect()
            }
            CriticHead::Quantile { n_atoms, .. } => vec![1.0 / *n_atoms as f64; *n_atoms],
        }
    }

    /// Builds per-sample regression targets from one or two target-critic
    /// outputs. With two critics each sample bootstraps from the critic with
    /// the smaller Q-value and, for distributional heads, uses that critic's
    /// whole distribution. `offsets` shifts every bootstrap atom (SAC's
    /// `−log π` term).
    pub fn build_targets(
        &self,
        rewards: &[f64],
        discount_pows: &[f64],
        target_outputs: &[&Tensor2],
        offsets: Option<&[f64]>,
    ) -> Result<CriticTargets> {
        let batch = rewards.len();
        if discount_pows.len() != batch {
            return Err(Error::dim("target discounts", batch, discount_pows.len()));
        }
        if target_outputs.is_empty() {
            return Err(Error::Usage("no target critic outputs".into()));
        }
        for o in target_outputs {
            if o.rows() != batch || o.cols() != self.output_dim() {
                return Err(Error::dim("target critic output rows", batch, o.rows()));
            }
        }
        let pick = |i: usize| -> &Tensor2 {
            let mut best = target_outputs[0];
            let mut best_q = self.q_value(best.row(i));
            for o in &target_outputs[1..] {
                let q = self.q_value(o.row(i));
                if q < best_q {
                    best = o;
                    best_q = q;
                }
            }
            best
        };
        let offset = |i: usize| offsets.map_or(0.0, |o| o[i]);
        Ok(match self {
            CriticHead::Scalar => {
                let bootstrap: Vec<f64> = (0..batch)
                    .map(|i| {
                        target_outputs
                            .iter()
                            .map(|o| o.get(i, 0))
                            .fold(f64::INFINITY, f64::min)
                            + offset(i)
                    })
                    .collect();
                CriticTargets::Scalar(build_target_scalar(rewards, discount_pows, &bootstrap))
            }
            CriticHead::Categorical(support) => {
                let n = support.n_atoms();
                let mut projected = Tensor2::zeros(batch, n);
                let mut atoms = vec![0.0; n];
                for i in 0..batch {
                    let probs = softmax(pick(i).row(i));
                    for (a, z) in atoms.iter_mut().zip(support.atoms()) {
                        *a = rewards[i] + discount_pows[i] * (z + offset(i));
                    }
                    cramer_project_into(&atoms, &probs, support, projected.row_mut(i))?;
                }
                CriticTargets::Categorical(projected)
            }
            CriticHead::Quantile { n_atoms, .. } => {
                let mut samples = Tensor2::zeros(batch, *n_atoms);
                for i in 0..batch {
                    let src = pick(i).row(i);
                    for (s, z) in samples.row_mut(i).iter_mut().zip(src) {
                        *s = rewards[i] + discount_pows[i] * (z + offset(i));
                    }
                }
                CriticTargets::Quantile(samples)
            }
        })
    }

    /// Batch-mean critic loss and its gradient with respect to the outputs.
    pub fn loss(&self, outputs: &Tensor2, targets: &CriticTargets) -> Result<(f64, Tensor2)> {
        let batch = outputs.rows();
        let inv_b = 1.0 / batch as f64;
        let mut grad = Tensor2::zeros(batch, outputs.cols());
        let mut loss = 0.0;
        match (self, targets) {
            (CriticHead::Scalar, CriticTargets::Scalar(y)) => {
                check_rows(y.len(), batch)?;
                for i in 0..batch {
                    let diff = outputs.get(i, 0) - y[i];
                    loss += diff * diff * inv_b;
                    grad.row_mut(i)[0] = 2.0 * diff * inv_b;
                }
            }
            (CriticHead::Categorical(_), CriticTargets::Categorical(t)) => {
                check_rows(t.rows(), batch)?;
                for i in 0..batch {
                    let (l, g) = categorical_loss(outputs.row(i), t.row(i))?;
                    loss += l * inv_b;
                    for (d, g) in grad.row_mut(i).iter_mut().zip(g) {
                        *d = g * inv_b;
                    }
                }
            }
            (CriticHead::Quantile { kappa, .. }, CriticTargets::Quantile(t)) => {
                check_rows(t.rows(), batch)?;
                for i in 0..batch {
                    let (l, g) = quantile_huber_loss(outputs.row(i), t.row(i), *kappa)?;
                    loss += l * inv_b;
                    for (d, g) in grad.row_mut(i).iter_mut().zip(g) {
                        *d = g * inv_b;
                    }
                }
            }
            _ => return Err(Error::Usage("critic targets do not match the head kind".into())),
        }
        Ok((loss, grad))
    }
}

fn check_rows(got: usize, batch: usize) -> Result<()> {
    if got != batch {
        return Err(Error::dim("critic targets", batch, got));
    }
    Ok(())
}

/// Regression targets for one batch.
#[derive(Clone, Debug, PartialEq)]
pub enum CriticTargets {
    Scalar(Vec<f64>),
    /// Projected target probabilities, one row per sample.
    Categorical(Tensor2),
    /// Shifted target atoms, one row per sample.
    Quantile(Tensor2),
}

/// `y_i = R_i + discount_pow_i · bootstrap_i`.
pub fn build_target_scalar(rewards: &[f64], discount_pows: &[f64], bootstrap: &[f64]) -> Vec<f64> {
    rewards
        .iter()
        .zip(discount_pows)
        .zip(bootstrap)
        .map(|((r, d), b)| r + d * b)
        .collect()
}

/// A batch of tanh-squashed Gaussian samples with everything the backward
/// pass needs. The policy network emits `[mean | log_std]` per row.
#[derive(Clone, Debug)]
pub struct GaussianSample {
    pub actions: Tensor2,
    pub log_probs: Vec<f64>,
    noise: Tensor2,
    tanh_u: Tensor2,
    std: Tensor2,
    log_std_active: Vec<bool>,
}

fn gaussian_log_density_const() -> f64 {
    0.5 * (2.0 * std::f64::consts::PI).ln()
}

impl GaussianSample {
    /// Samples with externally supplied standard-normal noise (`batch × dim`).
    pub fn from_noise(raw: &Tensor2, noise: Tensor2, bounds: &ActionBounds) -> Result<Self> {
        let d = bounds.dim();
        if raw.cols() != 2 * d {
            return Err(Error::dim("gaussian policy output", 2 * d, raw.cols()));
        }
        if noise.rows() != raw.rows() || noise.cols() != d {
            return Err(Error::dim("gaussian policy noise", d, noise.cols()));
        }
        let batch = raw.rows();
        let mut actions = Tensor2::zeros(batch, d);
        let mut tanh_u = Tensor2::zeros(batch, d);
        let mut std = Tensor2::zeros(batch, d);
        let mut log_std_active = Vec::with_capacity(batch * d);
        let mut log_probs = Vec::with_capacity(batch);
        for i in 0..batch {
            let row = raw.row(i);
            let mut lp = 0.0;
            for k in 0..d {
                let raw_ls = row[d + k];
                let ls = raw_ls.clamp(LOG_STD_MIN, LOG_STD_MAX);
                log_std_active.push(raw_ls > LOG_STD_MIN && raw_ls < LOG_STD_MAX);
                let s = ls.exp();
                let xi = noise.get(i, k);
                let u = row[k] + s * xi;
                let t = u.tanh();
                let h = bounds.half_range(k);
                lp += -0.5 * xi * xi - ls - gaussian_log_density_const();
                lp -= (h * (1.0 - t * t) + TANH_EPS).ln();
                actions.row_mut(i)[k] = bounds.center(k) + h * t;
                tanh_u.row_mut(i)[k] = t;
                std.row_mut(i)[k] = s;
            }
            log_probs.push(lp);
        }
        Ok(GaussianSample {
            actions,
            log_probs,
            noise,
            tanh_u,
            std,
            log_std_active,
        })
    }

    pub fn sample<R: Rng + ?Sized>(
        raw: &Tensor2,
        bounds: &ActionBounds,
        deterministic: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let d = bounds.dim();
        let noise = if deterministic {
            Tensor2::zeros(raw.rows(), d)
        } else {
            let data = (0..raw.rows() * d).map(|_| rng.sample(StandardNormal)).collect();
            Tensor2::new(raw.rows(), d, data)?
        };
        Self::from_noise(raw, noise, bounds)
    }

    /// Gradient with respect to the raw `[mean | log_std]` output given
    /// upstream gradients on the actions and on the per-row log-probs.
    pub fn backward(
        &self,
        d_actions: &Tensor2,
        d_log_probs: &[f64],
        bounds: &ActionBounds,
    ) -> Tensor2 {
        let batch = self.actions.rows();
        let d = bounds.dim();
        let mut out = Tensor2::zeros(batch, 2 * d);
        for i in 0..batch {
            let dl = d_log_probs[i];
            for k in 0..d {
                let t = self.tanh_u.get(i, k);
                let h = bounds.half_range(k);
                // log π contains −ln(h(1 − t²) + eps): ∂/∂t = 2ht / (h(1 − t²) + eps)
                let dt = d_actions.get(i, k) * h + dl * 2.0 * h * t / (h * (1.0 - t * t) + TANH_EPS);
                let du = dt * (1.0 - t * t);
                let row = out.row_mut(i);
                row[k] = du;
                if self.log_std_active[i * d + k] {
                    // u = mean + exp(ls)·ξ ; log π has −ls
                    row[d + k] = du * self.std.get(i, k) * self.noise.get(i, k) - dl;
                }
            }
        }
        out
    }
}
