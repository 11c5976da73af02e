//! Criterion 4: TD3 pessimism and actor delay, the SAC zero-discount target
//! and the soft-update rule.

use crl_core::algorithms::{
    td3_target_action, ActionBounds, Agent, AlgoConfig, AlgoKind, CriticTargets, DistributionConfig,
    UpdateBatch,
};
use crl_core::replay::{compute_nstep, to_update_batch, Episode};
use crl_core::Tensor2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::common::{random_tensor, Outcome};
use crate::ensure;

const OBS: usize = 3;

fn bounds() -> ActionBounds {
    ActionBounds::new(vec![-2.0, -0.5], vec![2.0, 1.5]).unwrap()
}

fn agent(kind: AlgoKind, dist: DistributionConfig, seed: u64) -> Agent {
    let mut cfg = AlgoConfig::new(kind);
    cfg.network.hidden = vec![16, 12];
    cfg.distribution = dist;
    cfg.batch_size = 8;
    Agent::new(cfg, OBS, bounds(), seed).unwrap()
}

fn random_batch(rng: &mut ChaCha8Rng, b: usize) -> UpdateBatch {
    UpdateBatch {
        states: random_tensor(rng, b, OBS),
        actions: random_tensor(rng, b, 2),
        rewards: (0..b).map(|_| rng.random_range(-5.0..5.0)).collect(),
        next_states: random_tensor(rng, b, OBS),
        dones: vec![false; b],
        discount_pows: vec![0.99; b],
    }
}

fn dists() -> [DistributionConfig; 3] {
    [
        DistributionConfig::None,
        DistributionConfig::Categorical { v_min: -20.0, v_max: 20.0, n_atoms: 21 },
        DistributionConfig::Quantile { n_atoms: 11, kappa: 1.0 },
    ]
}

/// The twin target never exceeds what either critic alone would give, and a
/// distributional target is exactly the lower-mean critic's target.
fn td3_pessimism(rng: &mut ChaCha8Rng) -> Result<usize, String> {
    let mut rows = 0;
    for (d, dist) in dists().into_iter().enumerate() {
        for trial in 0..10 {
            let mut a = agent(AlgoKind::Td3, dist.clone(), 40 + trial);
            // Push the targets apart from each other and from the online nets.
            for c in &mut a.nets.critics {
                for v in c.target.as_mut().unwrap().as_mut_slice() {
                    *v += rng.random_range(-0.3..0.3);
                }
            }
            let batch = random_batch(rng, 16);
            let noise_rng = a.rng.clone();
            let twin = a.critic_targets(&batch).map_err(|e| e.to_string())?;
            let next_actions = td3_target_action(
                a.nets.actor.target.as_ref().unwrap(),
                &batch.next_states,
                &a.nets.bounds,
                a.cfg.td3.smoothing_sigma,
                a.cfg.td3.noise_clip,
                &mut noise_rng.clone(),
            )
            .map_err(|e| e.to_string())?;
            let outs: Vec<Tensor2> = a
                .nets
                .critics
                .iter()
                .map(|c| c.target.as_ref().unwrap().forward(&batch.next_states, Some(&next_actions)).unwrap())
                .collect();
            let single: Vec<CriticTargets> = outs
                .iter()
                .map(|o| a.nets.head.build_targets(&batch.rewards, &batch.discount_pows, &[o], None).unwrap())
                .collect();
            for i in 0..batch.len() {
                match (&twin, &single[0], &single[1]) {
                    (CriticTargets::Scalar(y), CriticTargets::Scalar(y1), CriticTargets::Scalar(y2)) => {
                        ensure!(
                            y[i] <= y1[i] && y[i] <= y2[i] && (y[i] == y1[i] || y[i] == y2[i]),
                            "scalar target {} not the minimum of {} and {}",
                            y[i],
                            y1[i],
                            y2[i]
                        );
                    }
                    (CriticTargets::Categorical(t), CriticTargets::Categorical(t1), CriticTargets::Categorical(t2))
                    | (CriticTargets::Quantile(t), CriticTargets::Quantile(t1), CriticTargets::Quantile(t2)) => {
                        let q1 = a.nets.head.q_value(outs[0].row(i));
                        let q2 = a.nets.head.q_value(outs[1].row(i));
                        let want = if q2 < q1 { t2.row(i) } else { t1.row(i) };
                        ensure!(t.row(i) == want, "head {d} row {i}: target is not the lower-mean critic's");
                    }
                    _ => return Err("target kinds disagree".into()),
                }
                rows += 1;
            }
        }
    }
    Ok(rows)
}

/// With `d = 2` the actor and every target network move on even update
/// indices only, while the online critics move every time.
fn actor_delay(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let mut a = agent(AlgoKind::Td3, DistributionConfig::None, 7);
    a.cfg.td3.actor_delay = 2;
    for idx in 0..12u64 {
        let before = a.nets.clone();
        a.update(&random_batch(rng, 8)).map_err(|e| e.to_string())?;
        let actor_moved = a.nets.actor.online != before.actor.online;
        let targets_moved = a.nets.actor.target != before.actor.target
            && a.nets.critics.iter().zip(&before.critics).all(|(c, b)| c.target != b.target);
        let targets_still = a.nets.actor.target == before.actor.target
            && a.nets.critics.iter().zip(&before.critics).all(|(c, b)| c.target == b.target);
        let critics_moved = a.nets.critics.iter().zip(&before.critics).all(|(c, b)| c.online != b.online);
        ensure!(critics_moved, "update {idx}: online critics did not move");
        if idx % 2 == 0 {
            ensure!(actor_moved && targets_moved, "update {idx}: actor or targets did not move");
        } else {
            ensure!(
                !actor_moved && targets_still,
                "update {idx}: actor or a target moved off the delay schedule"
            );
        }
    }
    Ok(())
}

/// With `γ = 0` the SAC target is the scaled reward alone.
fn sac_zero_discount(rng: &mut ChaCha8Rng) -> Result<usize, String> {
    let mut checked = 0;
    for dist in [DistributionConfig::None, DistributionConfig::Quantile { n_atoms: 7, kappa: 1.0 }] {
        for trial in 0..10 {
            let mut a = agent(AlgoKind::Sac, dist.clone(), 90 + trial);
            a.cfg.gamma = 0.0;
            a.cfg.sac.reward_scale = rng.random_range(0.5..200.0);
            let s0: Vec<f32> = (0..OBS).map(|_| rng.random()).collect();
            let mut ep = Episode::new(trial, &s0, 2);
            for _ in 0..20 {
                let act: Vec<f32> = (0..2).map(|_| rng.random_range(-0.5..1.5)).collect();
                let next: Vec<f32> = (0..OBS).map(|_| rng.random()).collect();
                ep.push(&act, rng.random_range(-10.0..10.0), &next).map_err(|e| e.to_string())?;
            }
            ep.terminal = trial % 2 == 0;
            let ts = compute_nstep(&ep, rng.random_range(1..5), 0.0).map_err(|e| e.to_string())?;
            let batch = to_update_batch(&ts).map_err(|e| e.to_string())?;
            let scale = a.cfg.sac.reward_scale;
            match a.critic_targets(&batch).map_err(|e| e.to_string())? {
                CriticTargets::Scalar(y) => {
                    for (i, (y, r)) in y.iter().zip(&ep.rewards).enumerate() {
                        ensure!(*y == scale * r, "step {i}: target {y} expected {}", scale * r);
                    }
                }
                CriticTargets::Quantile(t) => {
                    for (i, r) in ep.rewards.iter().enumerate() {
                        ensure!(t.row(i).iter().all(|&v| v == scale * r), "step {i}: atoms are not the scaled reward");
                    }
                }
                CriticTargets::Categorical(_) => unreachable!(),
            }
            checked += ep.rewards.len();
        }
    }
    Ok(checked)
}

/// After an update the targets equal `τ·online + (1 − τ)·old_target` bit for bit.
fn soft_update(rng: &mut ChaCha8Rng) -> Result<(), String> {
    for kind in [AlgoKind::Ddpg, AlgoKind::Td3] {
        let mut a = agent(kind, DistributionConfig::None, 5);
        a.cfg.tau = rng.random_range(1e-4..0.5);
        let tau = a.cfg.tau;
        for _ in 0..5 {
            let before = a.nets.clone();
            a.update(&random_batch(rng, 8)).map_err(|e| e.to_string())?;
            let pairs = std::iter::once((&a.nets.actor, &before.actor))
                .chain(a.nets.critics.iter().zip(&before.critics));
            for (now, old) in pairs {
                let want: Vec<f64> = now
                    .online
                    .as_slice()
                    .iter()
                    .zip(old.target.as_ref().unwrap().as_slice())
                    .map(|(s, t)| tau * s + (1.0 - tau) * t)
                    .collect();
                ensure!(now.target.as_ref().unwrap().as_slice() == want.as_slice(), "{kind:?}: soft update is off");
            }
        }
    }
    Ok(())
}

pub fn check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4004);
    let rows = td3_pessimism(&mut rng)?;
    actor_delay(&mut rng)?;
    let sac = sac_zero_discount(&mut rng)?;
    soft_update(&mut rng)?;
    Ok(format!(
        "pessimism on {rows} rows, delay schedule over 12 updates, {sac} zero-discount SAC targets, soft updates exact"
    ))
}
