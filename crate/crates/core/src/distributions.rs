//! Return-distribution heads.
//!
//! Categorical heads keep fixed, evenly spaced atoms and learn probabilities
//! (networks emit logits); targets are mapped back onto the support with the
//! Cramér projection and fitted by cross-entropy. Quantile heads learn atom
//! positions with equal mass and are fitted with the quantile-regression Huber
//! loss at midpoint quantile levels `(2i − 1) / 2N`.

use crate::error::{Error, Result};

/// Tolerance on the mass of a distribution handed to [`cramer_project`].
pub const MASS_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct Support {
    v_min: f64,
    v_max: f64,
    atoms: Vec<f64>,
}

impl Support {
    pub fn new(v_min: f64, v_max: f64, n_atoms: usize) -> Result<Self> {
        if !(v_min.is_finite() && v_max.is_finite()) || v_min >= v_max {
            return Err(Error::Config(format!(
                "support requires finite v_min < v_max (got v_min={v_min}, v_max={v_max})"
            )));
        }
        if n_atoms < 2 {
            return Err(Error::Config(format!("support needs at least 2 atoms, got {n_atoms}")));
        }
        let dz = (v_max - v_min) / (n_atoms - 1) as f64;
        let mut atoms: Vec<f64> = (0..n_atoms).map(|i| v_min + i as f64 * dz).collect();
        atoms[n_atoms - 1] = v_max;
        Ok(Support { v_min, v_max, atoms })
    }

    pub fn v_min(&self) -> f64 {
        self.v_min
    }

    pub fn v_max(&self) -> f64 {
        self.v_max
    }

    pub fn n_atoms(&self) -> usize {
        self.atoms.len()
    }

    pub fn delta(&self) -> f64 {
        (self.v_max - self.v_min) / (self.atoms.len() - 1) as f64
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }
}

/// Alias kept for call sites that read better with the operation name.
pub fn make_support(v_min: f64, v_max: f64, n_atoms: usize) -> Result<Support> {
    Support::new(v_min, v_max, n_atoms)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CategoricalDist<'a> {
    pub support: &'a Support,
    pub probs: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuantileDist {
    pub atoms: Vec<f64>,
}

pub enum ValueDistribution<'a> {
    Categorical(CategoricalDist<'a>),
    Quantile(QuantileDist),
}

/// Projects a discrete distribution onto `support`: atoms are clipped to
/// `[v_min, v_max]` and each mass is split between the two neighbouring
/// support atoms in inverse proportion to distance.
pub fn cramer_project(
    target_atoms: &[f64],
    target_probs: &[f64],
    support: &Support,
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; support.n_atoms()];
    cramer_project_into(target_atoms, target_probs, support, &mut out)?;
    Ok(out)
}

/// Accumulating form of [`cramer_project`]; `out` is overwritten.
pub fn cramer_project_into(
    target_atoms: &[f64],
    target_probs: &[f64],
    support: &Support,
    out: &mut [f64],
) -> Result<()> {
    if target_atoms.len() != target_probs.len() {
        return Err(Error::dim("projection target probabilities", target_atoms.len(), target_probs.len()));
    }
    if out.len() != support.n_atoms() {
        return Err(Error::dim("projection output", support.n_atoms(), out.len()));
    }
    let mass: f64 = target_probs.iter().sum();
    if !((mass - 1.0).abs() <= MASS_TOLERANCE) {
        return Err(Error::Contract(format!("target distribution has mass {mass}, expected 1")));
    }
    out.fill(0.0);
    let dz = support.delta();
    let last = support.n_atoms() - 1;
    for (&z, &p) in target_atoms.iter().zip(target_probs) {
        let z = z.clamp(support.v_min, support.v_max);
        let mut b = ((z - support.v_min) / dz).clamp(0.0, last as f64);
        // Atoms that sit on the support land a few ulps off the grid.
        if (b - b.round()).abs() <= 8.0 * f64::EPSILON * b.max(1.0) {
            b = b.round();
        }
        let lo = b.floor() as usize;
        let hi = b.ceil() as usize;
        if lo == hi {
            out[lo] += p;
        } else {
            out[lo] += p * (hi as f64 - b);
            out[hi] += p * (b - lo as f64);
        }
    }
    Ok(())
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = p.iter().sum();
    for v in &mut p {
        *v /= sum;
    }
    p
}

/// Cross-entropy `−Σ target_i log softmax(logits)_i` and its gradient
/// `softmax(logits) − target` with respect to the logits.
pub fn categorical_loss(logits: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    if logits.len() != target.len() {
        return Err(Error::dim("categorical target", logits.len(), target.len()));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln() + max;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (&l, &t) in logits.iter().zip(target) {
        let log_p = l - log_sum;
        if t != 0.0 {
            loss -= t * log_p;
        }
        grad.push(log_p.exp() - t);
    }
    Ok((loss, grad))
}

/// Midpoint quantile levels `τ̂_i = (2i − 1) / 2N`, `i = 1..N`.
pub fn quantile_midpoints(n_atoms: usize) -> Vec<f64> {
    let n = n_atoms as f64;
    (1..=n_atoms).map(|i| (2 * i - 1) as f64 / (2.0 * n)).collect()
}

/// Quantile-regression Huber loss averaged over all `N·M` (atom, sample)
/// pairs, with its gradient with respect to `pred_atoms`.
pub fn quantile_huber_loss(
    pred_atoms: &[f64],
    target_samples: &[f64],
    kappa: f64,
) -> Result<(f64, Vec<f64>)> {
    if !(kappa > 0.0) {
        return Err(Error::Config(format!("huber kappa must be positive, got {kappa}")));
    }
    if pred_atoms.is_empty() || target_samples.is_empty() {
        return Err(Error::Contract("quantile loss needs at least one atom and one sample".into()));
    }
    let taus = quantile_midpoints(pred_atoms.len());
    let norm = 1.0 / (pred_atoms.len() * target_samples.len()) as f64;
    // Targets further than κ from an atom contribute terms linear in the
    // target, so after sorting they reduce to counts and prefix sums; only
    // the window within κ of each atom is summed pairwise.
    let mut sorted = target_samples.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let mut prefix = Vec::with_capacity(sorted.len() + 1);
    prefix.push(0.0);
    for &t in &sorted {
        prefix.push(prefix[prefix.len() - 1] + t);
    }
    let m = sorted.len();
    let mut loss = 0.0;
    let mut grad = vec![0.0; pred_atoms.len()];
    for ((&pred, &tau), g) in pred_atoms.iter().zip(&taus).zip(grad.iter_mut()) {
        let lo = sorted.partition_point(|&t| t < pred - kappa);
        let hi = sorted.partition_point(|&t| t <= pred + kappa);
        // u = t − pred < −κ: weight (1 − τ), Huber κ(−u − κ/2)
        let below = lo as f64;
        let mut l = (1.0 - tau) * kappa * (below * (pred - 0.5 * kappa) - prefix[lo]);
        let mut d = -(1.0 - tau) * kappa * below;
        for &t in &sorted[lo..hi] {
            let u = t - pred;
            let weight = if u < 0.0 { 1.0 - tau } else { tau };
            l += weight * 0.5 * u * u;
            d += weight * u;
        }
        // u > κ: weight τ, Huber κ(u − κ/2)
        let above = (m - hi) as f64;
        l += tau * kappa * ((prefix[m] - prefix[hi]) - above * (pred + 0.5 * kappa));
        d += tau * kappa * above;
        loss += l / kappa;
        // d/dpred = −d/du
        *g = -d / kappa;
    }
    loss *= norm;
    for g in &mut grad {
        *g *= norm;
    }
    Ok((loss, grad))
}

pub fn categorical_mean(support: &Support, probs: &[f64]) -> f64 {
    probs.iter().zip(support.atoms()).map(|(p, z)| p * z).sum()
}

pub fn quantile_mean(atoms: &[f64]) -> f64 {
    atoms.iter().sum::<f64>() / atoms.len() as f64
}

/// Expectation of a value distribution.
pub fn dist_mean(dist: &ValueDistribution<'_>) -> f64 {
    match dist {
        ValueDistribution::Categorical(c) => categorical_mean(c.support, &c.probs),
        ValueDistribution::Quantile(q) => quantile_mean(&q.atoms),
    }
}

/// Distributional Bellman shift `reward + discount_pow · z`.
pub fn bellman_shift(atoms: &[f64], reward: f64, discount_pow: f64) -> Vec<f64> {
    atoms.iter().map(|z| reward + discount_pow * z).collect()
}
