//! Criterion 1: analytic gradients against central finite differences.

use crl_core::algorithms::{
    ActionBounds, ActorCriticSet, AlgoConfig, AlgoKind, CriticTargets, DistributionConfig, UpdateBatch,
};
use crl_core::mlp::{MlpLayout, MlpParams};
use crl_core::Tensor2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::common::{dot, random_tensor, Outcome};
use crate::ensure;

const H: f64 = 1e-6;
const TOL: f64 = 1e-5;
/// Denominator floor: entries whose true derivative is zero up to rounding
/// are judged on absolute error instead.
const FLOOR: f64 = 1e-4;

fn max_rel_err(x: &[f64], analytic: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let mut x = x.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + H;
        let up = f(&x);
        x[i] = orig - H;
        let down = f(&x);
        x[i] = orig;
        let numeric = (up - down) / (2.0 * H);
        let err = (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(FLOOR);
        worst = worst.max(err);
    }
    worst
}

fn mlp_case(rng: &mut ChaCha8Rng) -> f64 {
    let ln = rng.random_bool(0.7);
    let insert = rng.random_bool(0.5);
    let sizes = vec![rng.random_range(2..6), rng.random_range(2..7), rng.random_range(2..6), rng.random_range(1..4)];
    let batch = rng.random_range(1..5);
    let mut layout = MlpLayout::new(sizes.clone(), ln);
    let act_dim = rng.random_range(1..3);
    if insert {
        layout = layout.with_action_input(1, act_dim);
    }
    let mut p = MlpParams::init(layout.clone(), None, rng).unwrap();
    for v in p.as_mut_slice() {
        *v += rng.random_range(-0.2..0.2);
    }
    let obs = random_tensor(rng, batch, sizes[0]);
    let act = insert.then(|| random_tensor(rng, batch, act_dim));
    let up = random_tensor(rng, batch, sizes[3]);
    let (_, cache) = p.forward_cached(&obs, act.as_ref()).unwrap();
    let g = p.backward(&cache, &up).unwrap();
    let mut worst = max_rel_err(p.as_slice(), &g.params, |x| {
        let q = MlpParams::from_flat(layout.clone(), x.to_vec()).unwrap();
        dot(&q.forward(&obs, act.as_ref()).unwrap(), &up)
    });
    worst = worst.max(max_rel_err(obs.data(), g.input.data(), |x| {
        let o = Tensor2::new(batch, sizes[0], x.to_vec()).unwrap();
        dot(&p.forward(&o, act.as_ref()).unwrap(), &up)
    }));
    if let (Some(a), Some(ga)) = (&act, &g.action) {
        worst = worst.max(max_rel_err(a.data(), ga.data(), |x| {
            let a = Tensor2::new(batch, act_dim, x.to_vec()).unwrap();
            dot(&p.forward(&obs, Some(&a)).unwrap(), &up)
        }));
    }
    worst
}

fn random_dist(rng: &mut ChaCha8Rng, which: usize) -> DistributionConfig {
    match which % 3 {
        0 => DistributionConfig::None,
        1 => DistributionConfig::Categorical {
            v_min: -3.0,
            v_max: 3.0,
            n_atoms: rng.random_range(3..12),
        },
        _ => DistributionConfig::Quantile {
            n_atoms: rng.random_range(1..9),
            kappa: rng.random_range(0.5..2.0),
        },
    }
}

fn small_set(kind: AlgoKind, dist: DistributionConfig, rng: &mut ChaCha8Rng) -> ActorCriticSet {
    let mut cfg = AlgoConfig::new(kind);
    cfg.network.hidden = vec![rng.random_range(3..8), rng.random_range(3..7)];
    cfg.network.layer_norm = rng.random_bool(0.8);
    cfg.distribution = dist;
    let bounds = ActionBounds::new(vec![-2.0, 0.0], vec![2.0, 1.0]).unwrap();
    let mut set = ActorCriticSet::new(&cfg, 3, bounds, rng).unwrap();
    // Keep tanh away from its linear regime so the squashing is exercised.
    for v in set.actor.online.as_mut_slice() {
        *v += rng.random_range(-0.3..0.3);
    }
    set
}

fn critic_case(rng: &mut ChaCha8Rng, which: usize) -> f64 {
    let dist = random_dist(rng, which);
    let set = small_set(AlgoKind::Ddpg, dist.clone(), rng);
    let b = rng.random_range(1..6);
    let batch = UpdateBatch {
        states: random_tensor(rng, b, 3),
        actions: random_tensor(rng, b, 2),
        rewards: vec![0.0; b],
        next_states: random_tensor(rng, b, 3),
        dones: vec![false; b],
        discount_pows: vec![0.9; b],
    };
    let targets = match dist {
        DistributionConfig::None => CriticTargets::Scalar((0..b).map(|_| rng.random_range(-2.0..2.0)).collect()),
        DistributionConfig::Categorical { n_atoms, .. } => {
            let mut t = random_tensor(rng, b, n_atoms);
            for i in 0..b {
                let row = t.row_mut(i);
                row.iter_mut().for_each(|v| *v = v.abs() + 1e-3);
                let s: f64 = row.iter().sum();
                row.iter_mut().for_each(|v| *v /= s);
            }
            CriticTargets::Categorical(t)
        }
        DistributionConfig::Quantile { n_atoms, .. } => {
            let m = rng.random_range(1..n_atoms + 4);
            CriticTargets::Quantile(random_tensor(rng, b, m))
        }
    };
    let (_, g) = set.critic_loss_grad(0, &batch, &targets).unwrap();
    let mut probe = set.clone();
    max_rel_err(set.critics[0].online.as_slice(), &g, |x| {
        probe.critics[0].online.as_mut_slice().copy_from_slice(x);
        probe.critic_loss_grad(0, &batch, &targets).unwrap().0
    })
}

fn actor_case(rng: &mut ChaCha8Rng, which: usize, sac: bool) -> f64 {
    let dist = random_dist(rng, which);
    let kind = if sac { AlgoKind::Sac } else { AlgoKind::Td3 };
    let set = small_set(kind, dist, rng);
    let b = rng.random_range(1..6);
    let states = random_tensor(rng, b, 3);
    let mut probe = set.clone();
    if sac {
        let noise = random_tensor(rng, b, 2);
        let (_, g) = set.stochastic_actor_loss(&states, noise.clone()).unwrap();
        max_rel_err(set.actor.online.as_slice(), &g, |x| {
            probe.actor.online.as_mut_slice().copy_from_slice(x);
            probe.stochastic_actor_loss(&states, noise.clone()).unwrap().0
        })
    } else {
        let (_, g) = set.deterministic_actor_loss(&states).unwrap();
        max_rel_err(set.actor.online.as_slice(), &g, |x| {
            probe.actor.online.as_mut_slice().copy_from_slice(x);
            probe.deterministic_actor_loss(&states).unwrap().0
        })
    }
}

pub fn check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1001);
    let mut worst = 0.0f64;
    let labels = ["mlp", "critic", "deterministic actor", "sac actor"];
    let mut per_kind = [0.0f64; 4];
    for case in 0..100 {
        let kind = case % 4;
        let which = case / 4;
        let err = match kind {
            0 => mlp_case(&mut rng),
            1 => critic_case(&mut rng, which),
            2 => actor_case(&mut rng, which, false),
            _ => actor_case(&mut rng, which, true),
        };
        per_kind[kind] = per_kind[kind].max(err);
        ensure!(err < TOL, "case {case} ({}) max relative error {err:.3e}", labels[kind]);
        worst = worst.max(err);
    }
    Ok(format!(
        "100 cases, max relative error {worst:.2e} (mlp {:.1e}, critic {:.1e}, actor {:.1e}, sac {:.1e})",
        per_kind[0], per_kind[1], per_kind[2], per_kind[3]
    ))
}
