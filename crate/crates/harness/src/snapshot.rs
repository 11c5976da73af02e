//! Run checkpoints on disk.
//!
//! `<dir>/<run-id>/` holds `config.norm.yaml`, one `.crlw` file per network
//! (`actor`, `critic1`, `critic2`, and `*_target` copies), one Adam `.bin`
//! per trained network, `replay.crlr`, `returns.txt` and `manifest.txt`.
//! The manifest is written last and is what marks a checkpoint complete.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crl_core::algorithms::{Agent, Trainable};
use crl_core::checkpoint::{load_adam, load_params, save_adam, save_params, write_atomic};
use crl_core::mlp::MlpParams;
use rand_chacha::ChaCha8Rng;

use crate::error::{HarnessError, Result};

pub const MANIFEST: &str = "manifest.txt";
pub const CONFIG_FILE: &str = "config.norm.yaml";
pub const REPLAY_FILE: &str = "replay.crlr";
pub const RETURNS_FILE: &str = "returns.txt";

fn bad(msg: impl Into<String>) -> HarnessError {
    HarnessError::Checkpoint(msg.into())
}

/// Flat `key = value` text. Keys are unique and sorted on output.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    entries: BTreeMap<String, String>,
}

impl Manifest {
    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.entries
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| bad(format!("manifest lacks '{key}'")))
    }

    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.get(key)?;
        raw.parse()
            .map_err(|_| bad(format!("manifest entry '{key}' has unreadable value '{raw}'")))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut m = Manifest::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("manifest line {} has no '='", n + 1)))?;
            let k = k.trim();
            if k.is_empty() {
                return Err(bad(format!("manifest line {} has an empty key", n + 1)));
            }
            if m.entries.insert(k.to_string(), v.trim().to_string()).is_some() {
                return Err(bad(format!("manifest key '{k}' repeated")));
            }
        }
        Ok(m)
    }

    pub fn set_rng(&mut self, prefix: &str, rng: &ChaCha8Rng) {
        let seed: String = rng.get_seed().iter().map(|b| format!("{b:02x}")).collect();
        self.set(&format!("{prefix}.seed"), seed);
        self.set(&format!("{prefix}.stream"), rng.get_stream());
        self.set(&format!("{prefix}.word_pos"), rng.get_word_pos());
    }

    pub fn rng(&self, prefix: &str) -> Result<ChaCha8Rng> {
        use rand::SeedableRng;
        let hex = self.get(&format!("{prefix}.seed"))?;
        if hex.len() != 64 || !hex.is_ascii() {
            return Err(bad(format!("{prefix}.seed must be 64 hex digits")));
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&hex[2 * i..2 * i + 2], 16)
                .map_err(|_| bad(format!("{prefix}.seed is not hex")))?;
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.parse(&format!("{prefix}.stream"))?);
        rng.set_word_pos(self.parse(&format!("{prefix}.word_pos"))?);
        Ok(rng)
    }
}

pub fn read_manifest(dir: &Path) -> Result<Option<Manifest>> {
    let path = dir.join(MANIFEST);
    match std::fs::read_to_string(&path) {
        Ok(text) => Manifest::from_text(&text).map(Some),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e.into()),
    }
}

pub fn write_manifest(dir: &Path, m: &Manifest) -> Result<()> {
    Ok(write_atomic(&dir.join(MANIFEST), m.to_text().as_bytes())?)
}

fn trainables(agent: &Agent) -> Vec<(String, &Trainable)> {
    let mut v = vec![("actor".to_string(), &agent.nets.actor)];
    for (k, c) in agent.nets.critics.iter().enumerate() {
        v.push((format!("critic{}", k + 1), c));
    }
    v
}

fn net_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.crlw"))
}

/// Writes every network, target and optimizer plus the agent's counters
/// into `m`.
pub fn save_agent(dir: &Path, agent: &Agent, m: &mut Manifest) -> Result<()> {
    for (name, t) in trainables(agent) {
        save_params(&net_path(dir, &name), &t.online)?;
        if let Some(target) = &t.target {
            save_params(&net_path(dir, &format!("{name}_target")), target)?;
        }
        save_adam(&dir.join(format!("adam_{name}.bin")), &t.opt)?;
    }
    m.set("agent.algorithm", agent.cfg.kind.name());
    m.set("agent.update_count", agent.update_count);
    m.set_rng("agent.rng", &agent.rng);
    Ok(())
}

fn load_into(path: &Path, slot: &mut MlpParams) -> Result<()> {
    let p = load_params(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
    if p.layout() != slot.layout() {
        return Err(bad(format!(
            "{} has layout {:?}, configuration expects {:?}",
            path.display(),
            p.layout().layer_sizes,
            slot.layout().layer_sizes
        )));
    }
    *slot = p;
    Ok(())
}

/// Overwrites a freshly built agent with the checkpointed state.
pub fn load_agent(dir: &Path, agent: &mut Agent, m: &Manifest) -> Result<()> {
    let algo = m.get("agent.algorithm")?;
    if algo != agent.cfg.kind.name() {
        return Err(bad(format!("checkpoint holds a {algo} agent, configuration asks for {}", agent.cfg.kind.name())));
    }
    let names: Vec<String> = trainables(agent).into_iter().map(|(n, _)| n).collect();
    let mut slots: Vec<&mut Trainable> = std::iter::once(&mut agent.nets.actor)
        .chain(agent.nets.critics.iter_mut())
        .collect();
    for (name, t) in names.iter().zip(slots.iter_mut()) {
        load_into(&net_path(dir, name), &mut t.online)?;
        if let Some(target) = t.target.as_mut() {
            load_into(&net_path(dir, &format!("{name}_target")), target)?;
        }
        let path = dir.join(format!("adam_{name}.bin"));
        let opt = load_adam(&path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
        if opt.m.len() != t.online.len() {
            return Err(bad(format!("{} does not match the {name} network", path.display())));
        }
        t.opt = opt;
    }
    agent.update_count = m.parse("agent.update_count")?;
    agent.rng = m.rng("agent.rng")?;
    Ok(())
}

pub fn write_returns(dir: &Path, returns: &[f64]) -> Result<()> {
    let mut s = String::with_capacity(returns.len() * 20);
    for r in returns {
        let _ = writeln!(s, "{r}");
    }
    Ok(write_atomic(&dir.join(RETURNS_FILE), s.as_bytes())?)
}

pub fn read_returns(dir: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(dir.join(RETURNS_FILE))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.trim().parse().map_err(|_| bad(format!("unreadable return '{l}'"))))
        .collect()
}
