//! Criterion 2: categorical projection against a direct triangular-kernel oracle.

use crl_core::distributions::{cramer_project, Support};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::common::Outcome;
use crate::ensure;

/// Each clipped source atom contributes `max(0, 1 − |z − z_i| / Δz)` of its
/// mass to support atom `i`.
fn oracle(atoms: &[f64], probs: &[f64], support: &Support) -> Vec<f64> {
    let dz = support.delta();
    support
        .atoms()
        .iter()
        .map(|&zi| {
            atoms
                .iter()
                .zip(probs)
                .map(|(&z, &p)| {
                    let z = z.clamp(support.v_min(), support.v_max());
                    p * (1.0 - (z - zi).abs() / dz).max(0.0)
                })
                .sum()
        })
        .collect()
}

fn random_probs(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut p: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0f64).powi(2) + 1e-9).collect();
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= s);
    p
}

pub fn check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2002);
    let mut worst_entry = 0.0f64;
    let mut worst_mass = 0.0f64;
    for case in 0..1000 {
        let n = rng.random_range(2..102);
        let v_min = rng.random_range(-200.0..0.0);
        let v_max = v_min + rng.random_range(0.5..400.0);
        let support = Support::new(v_min, v_max, n).map_err(|e| e.to_string())?;
        let m = rng.random_range(1..120);
        let width = v_max - v_min;
        let atoms: Vec<f64> = (0..m)
            .map(|_| match rng.random_range(0..10) {
                // Exactly on a support atom.
                0 => support.atoms()[rng.random_range(0..n)],
                // Far outside the support.
                1 => v_min - rng.random_range(0.0..3.0) * width,
                2 => v_max + rng.random_range(0.0..3.0) * width,
                _ => rng.random_range(v_min - 0.2 * width..v_max + 0.2 * width),
            })
            .collect();
        let probs = random_probs(&mut rng, m);
        let got = cramer_project(&atoms, &probs, &support).map_err(|e| e.to_string())?;
        let want = oracle(&atoms, &probs, &support);
        for (i, (g, w)) in got.iter().zip(&want).enumerate() {
            let err = (g - w).abs();
            worst_entry = worst_entry.max(err);
            ensure!(err <= 1e-12, "case {case}: atom {i} got {g} expected {w}");
        }
        let mass_err = (got.iter().sum::<f64>() - 1.0).abs();
        worst_mass = worst_mass.max(mass_err);
        ensure!(mass_err <= 1e-9, "case {case}: mass off by {mass_err:e}");
        // Projection is linear in the target mass.
        let other: Vec<f64> = (0..m).map(|_| rng.random_range(v_min - width..v_max + width)).collect();
        let other_probs = random_probs(&mut rng, m);
        let lambda = rng.random_range(0.0..1.0);
        let mixed_atoms: Vec<f64> = atoms.iter().chain(&other).copied().collect();
        let mixed_probs: Vec<f64> = probs
            .iter()
            .map(|p| lambda * p)
            .chain(other_probs.iter().map(|p| (1.0 - lambda) * p))
            .collect();
        let mixed = cramer_project(&mixed_atoms, &mixed_probs, &support).map_err(|e| e.to_string())?;
        let second = cramer_project(&other, &other_probs, &support).map_err(|e| e.to_string())?;
        for (i, ((x, a), b)) in mixed.iter().zip(&got).zip(&second).enumerate() {
            let want = lambda * a + (1.0 - lambda) * b;
            ensure!((x - want).abs() <= 1e-12, "case {case}: mixture atom {i} got {x} expected {want}");
        }
        let clipped_mean: f64 = atoms.iter().zip(&probs).map(|(z, p)| p * z.clamp(v_min, v_max)).sum();
        let proj_mean: f64 = got.iter().zip(support.atoms()).map(|(p, z)| p * z).sum();
        ensure!(
            (proj_mean - clipped_mean).abs() <= support.delta(),
            "case {case}: projected mean {proj_mean} drifts from {clipped_mean}"
        );
    }

    // Atoms already on the support project to themselves.
    let support = Support::new(-10.0, 10.0, 51).map_err(|e| e.to_string())?;
    let probs = random_probs(&mut rng, 51);
    let same = cramer_project(support.atoms(), &probs, &support).map_err(|e| e.to_string())?;
    ensure!(same == probs, "identity projection changed the distribution");
    // Everything beyond v_max lands on the last atom.
    let beyond: Vec<f64> = (0..7).map(|i| 10.0 + i as f64).collect();
    let out = cramer_project(&beyond, &random_probs(&mut rng, 7), &support).map_err(|e| e.to_string())?;
    ensure!(
        (out[50] - 1.0).abs() <= 1e-12 && out[..50].iter().all(|&p| p == 0.0),
        "mass beyond v_max did not collapse onto the last atom"
    );
    Ok(format!(
        "1000 projections, max entry error {worst_entry:.1e}, max mass error {worst_mass:.1e}"
    ))
}
