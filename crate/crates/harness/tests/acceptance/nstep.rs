//! Criterion 3: n-step transitions against a brute-force oracle.

use crl_core::replay::{compute_nstep, Episode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::common::Outcome;
use crate::ensure;

pub fn check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3003);
    let mut transitions = 0usize;
    let mut worst = 0.0f64;
    for case in 0..1000 {
        let n = match case % 4 {
            0 => 1,
            1 => 5,
            _ => rng.random_range(1..8),
        };
        let gamma = if case % 3 == 0 { 0.99 } else { rng.random_range(0.0..=1.0) };
        let len = rng.random_range(1..40);
        let (obs, act) = (rng.random_range(1..4), rng.random_range(1..3));
        let s0: Vec<f32> = (0..obs).map(|_| rng.random()).collect();
        let mut ep = Episode::new(case as u64, &s0, act);
        let mut states = vec![s0];
        let mut actions = Vec::new();
        let mut rewards = Vec::new();
        for _ in 0..len {
            let a: Vec<f32> = (0..act).map(|_| rng.random()).collect();
            let s: Vec<f32> = (0..obs).map(|_| rng.random()).collect();
            let r = rng.random_range(-10.0..10.0);
            ep.push(&a, r, &s).map_err(|e| e.to_string())?;
            actions.push(a);
            rewards.push(r);
            states.push(s);
        }
        ep.terminal = rng.random_bool(0.5);
        let got = compute_nstep(&ep, n, gamma).map_err(|e| e.to_string())?;
        ensure!(got.len() == len, "case {case}: {} transitions for {len} steps", got.len());
        for (t, tr) in got.iter().enumerate() {
            let mut k = 0;
            let mut reward = 0.0;
            while k < n && t + k < len {
                reward += gamma.powi(k as i32) * rewards[t + k];
                k += 1;
            }
            let done = ep.terminal && t + k == len;
            let err = (tr.n_step_reward - reward).abs();
            worst = worst.max(err);
            ensure!(err <= 1e-12, "case {case} t={t}: reward {} expected {reward}", tr.n_step_reward);
            ensure!(tr.step as usize == t && tr.episode_tag == case as u64, "case {case} t={t}: wrong index");
            ensure!(
                tr.state == states[t] && tr.action == actions[t] && tr.next_state == states[t + k],
                "case {case} t={t}: wrong state, action or next state"
            );
            ensure!(tr.done == done, "case {case} t={t}: done {} expected {done}", tr.done);
            let discount = if done { 0.0 } else { gamma.powi(k as i32) };
            ensure!(
                (tr.discount_pow - discount).abs() <= 1e-12,
                "case {case} t={t}: discount {} expected {discount}",
                tr.discount_pow
            );
        }
        transitions += len;
    }
    Ok(format!("1000 episodes, {transitions} transitions, max reward error {worst:.1e}"))
}
