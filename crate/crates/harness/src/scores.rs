//! Final scores and the cross-environment aggregate.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use crl_core::Error as CoreError;
use serde::Deserialize;

use crate::error::{HarnessError, Result};

/// Episodes averaged for a final score.
pub const FINAL_WINDOW: usize = 100;

/// Mean of the last `min(100, len)` returns.
pub fn final_score(returns: &[f64]) -> Result<f64> {
    if returns.is_empty() {
        return Err(CoreError::Contract("final score of an empty return list".into()).into());
    }
    let tail = &returns[returns.len().saturating_sub(FINAL_WINDOW)..];
    // Shifted by the first entry so a constant tail scores exactly that constant.
    let pivot = tail[0];
    Ok(pivot + tail.iter().map(|r| r - pivot).sum::<f64>() / tail.len() as f64)
}

/// Final scores keyed by `(config, env)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoreTable {
    cells: BTreeMap<(String, String), f64>,
}

impl ScoreTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, config: impl Into<String>, env: impl Into<String>, score: f64) -> Result<()> {
        let (config, env) = (config.into(), env.into());
        if !score.is_finite() {
            return Err(HarnessError::Scores(format!("score for ({config}, {env}) is not finite")));
        }
        if self.cells.insert((config.clone(), env.clone()), score).is_some() {
            return Err(HarnessError::Scores(format!("duplicate score for ({config}, {env})")));
        }
        Ok(())
    }

    pub fn get(&self, config: &str, env: &str) -> Option<f64> {
        self.cells.get(&(config.to_string(), env.to_string())).copied()
    }

    pub fn configs(&self) -> BTreeSet<&str> {
        self.cells.keys().map(|(c, _)| c.as_str()).collect()
    }

    pub fn envs(&self) -> BTreeSet<&str> {
        self.cells.keys().map(|(_, e)| e.as_str()).collect()
    }

    /// Reads `config,env,score` rows with a header.
    pub fn from_csv(reader: impl Read) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            config: String,
            env: String,
            score: f64,
        }
        let mut table = ScoreTable::new();
        for row in csv::Reader::from_reader(reader).deserialize() {
            let row: Row = row?;
            table.insert(row.config, row.env, row.score)?;
        }
        Ok(table)
    }
}

/// Per env, min-max scales scores across configs to [0,1] (a tie maps every
/// config to 0.5), then averages each config over envs.
pub fn aggregate_scores(table: &ScoreTable) -> Result<BTreeMap<String, f64>> {
    let configs = table.configs();
    let envs = table.envs();
    if configs.is_empty() {
        return Err(HarnessError::Scores("empty score table".into()));
    }
    let mut sums: BTreeMap<String, f64> = configs.iter().map(|c| (c.to_string(), 0.0)).collect();
    for env in &envs {
        let mut column = Vec::with_capacity(configs.len());
        for config in &configs {
            let s = table
                .get(config, env)
                .ok_or_else(|| HarnessError::Scores(format!("missing score for ({config}, {env})")))?;
            column.push(s);
        }
        let lo = column.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = column.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for (config, s) in configs.iter().zip(column) {
            let scaled = if hi > lo { (s - lo) / (hi - lo) } else { 0.5 };
            *sums.get_mut(*config).expect("config listed") += scaled;
        }
    }
    let n = envs.len() as f64;
    Ok(sums.into_iter().map(|(c, s)| (c, s / n)).collect())
}
