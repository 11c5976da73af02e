//! Criterion 8: final-score and aggregate arithmetic against direct oracles.

use crl_harness::{aggregate_scores, final_score, ScoreTable};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::common::Outcome;
use crate::ensure;

fn oracle_final(returns: &[f64]) -> f64 {
    let start = returns.len().saturating_sub(100);
    let tail = &returns[start..];
    tail.iter().sum::<f64>() / tail.len() as f64
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * b.abs().max(1.0)
}

pub fn check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8008);
    for case in 0..500 {
        let len = rng.random_range(1..400);
        let scale = 10f64.powi(rng.random_range(-2..4));
        let returns: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0) * scale).collect();
        let got = final_score(&returns).map_err(|e| e.to_string())?;
        let want = oracle_final(&returns);
        ensure!(close(got, want), "case {case}: final score {got} expected {want}");
    }
    ensure!(final_score(&[]).is_err(), "empty return list produced a score");

    let mut tables = 0;
    for case in 0..200 {
        let n_cfg = if case == 0 { 18 } else { rng.random_range(1..20) };
        let n_env = if case == 0 { 6 } else { rng.random_range(1..8) };
        let mut table = ScoreTable::new();
        let mut cells = vec![vec![0.0; n_env]; n_cfg];
        for (c, row) in cells.iter_mut().enumerate() {
            for (e, cell) in row.iter_mut().enumerate() {
                // Occasional ties exercise the degenerate column.
                *cell = if rng.random_bool(0.1) { 3.0 } else { rng.random_range(-500.0..500.0) };
                table.insert(format!("c{c:02}"), format!("e{e}"), *cell).map_err(|e| e.to_string())?;
            }
        }
        let agg = aggregate_scores(&table).map_err(|e| e.to_string())?;
        ensure!(agg.len() == n_cfg, "case {case}: {} aggregates for {n_cfg} configs", agg.len());
        for (c, row) in cells.iter().enumerate() {
            let mut want = 0.0;
            for e in 0..n_env {
                let col: Vec<f64> = cells.iter().map(|r| r[e]).collect();
                let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                want += if hi == lo { 0.5 } else { (row[e] - lo) / (hi - lo) };
            }
            want /= n_env as f64;
            let got = agg[&format!("c{c:02}")];
            ensure!(close(got, want), "case {case}: config {c} aggregate {got} expected {want}");
            ensure!((0.0..=1.0).contains(&got), "case {case}: aggregate {got} outside [0,1]");
        }
        tables += 1;
    }
    Ok(format!("500 final scores and {tables} tables (first 18x6) match their oracles"))
}
