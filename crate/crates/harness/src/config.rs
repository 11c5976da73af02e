//! YAML experiment configuration: parsing, defaulting, validation and the
//! normalized dump every run records.
//!
//! Two shorthands are accepted and expanded before parsing: `env: <name>`
//! and `algorithm: <kind>`, as well as `distribution: <kind>`.

use crl_core::algorithms::{
    AlgoConfig, AlgoKind, DistributionConfig, NetworkConfig, SacParams, Td3Params,
};
use crl_core::envs::ENV_NAMES;
use serde::{Deserialize, Serialize};
use serde_yaml::{Mapping, Value};
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvSection,
    pub algorithm: AlgorithmSection,
    #[serde(default)]
    pub network: NetworkSection,
    #[serde(default)]
    pub replay: ReplaySection,
    #[serde(default)]
    pub distributed: DistributedSection,
    #[serde(default)]
    pub run: RunSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSection {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlgoName {
    Ddpg,
    Td3,
    Sac,
}

impl From<AlgoName> for AlgoKind {
    fn from(a: AlgoName) -> Self {
        match a {
            AlgoName::Ddpg => AlgoKind::Ddpg,
            AlgoName::Td3 => AlgoKind::Td3,
            AlgoName::Sac => AlgoKind::Sac,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmSection {
    pub kind: AlgoName,
    #[serde(default = "d::gamma")]
    pub gamma: f64,
    #[serde(default = "d::tau")]
    pub tau: f64,
    #[serde(default = "d::lr")]
    pub actor_lr: f64,
    #[serde(default = "d::lr")]
    pub critic_lr: f64,
    #[serde(default = "d::batch_size")]
    pub batch_size: usize,
    #[serde(default = "d::exploration_sigma")]
    pub exploration_sigma: f64,
    #[serde(default)]
    pub distribution: DistributionSection,
    #[serde(default)]
    pub td3: Td3Section,
    #[serde(default)]
    pub sac: SacSection,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistributionKind {
    #[default]
    None,
    Categorical,
    Quantile,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistributionSection {
    #[serde(default)]
    pub kind: DistributionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_atoms: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Td3Section {
    pub smoothing_sigma: f64,
    pub noise_clip: f64,
    pub actor_delay: u64,
}

impl Default for Td3Section {
    fn default() -> Self {
        Td3Section {
            smoothing_sigma: 0.2,
            noise_clip: 0.5,
            actor_delay: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SacSection {
    pub reward_scale: f64,
}

impl Default for SacSection {
    fn default() -> Self {
        SacSection { reward_scale: 150.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSection {
    pub hidden: Vec<usize>,
    pub layer_norm: bool,
}

impl Default for NetworkSection {
    fn default() -> Self {
        NetworkSection {
            hidden: vec![400, 300],
            layer_norm: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReplaySection {
    pub capacity: usize,
    /// Defaults to ten batches.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warm_up: Option<usize>,
    pub n_step: usize,
}

impl Default for ReplaySection {
    fn default() -> Self {
        ReplaySection {
            capacity: 1_000_000,
            warm_up: None,
            n_step: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistributedSection {
    pub samplers: usize,
    pub eval_samplers: usize,
    pub hub: String,
    /// Trainer updates between weight publications.
    pub publish_period: u64,
    /// Sampler episodes between weight refreshes.
    pub refresh_period: u64,
    pub store_eval: bool,
}

impl Default for DistributedSection {
    fn default() -> Self {
        DistributedSection {
            samplers: 1,
            eval_samplers: 0,
            hub: "127.0.0.1:7070".into(),
            publish_period: 100,
            refresh_period: 1,
            store_eval: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_env_steps: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_episodes: Option<u64>,
    /// Trainer role only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_updates: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_clock_s: Option<f64>,
    /// Episodes between checkpoints; the trainer role saves every this many
    /// publications.
    pub checkpoint_period: u64,
    /// Training episodes between evaluation rounds; 0 disables them.
    pub eval_period: u64,
    pub eval_episodes: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint_dir: Option<String>,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            max_env_steps: None,
            max_episodes: None,
            max_updates: None,
            wall_clock_s: None,
            checkpoint_period: 50,
            eval_period: 0,
            eval_episodes: 5,
            metrics: None,
            checkpoint_dir: None,
        }
    }
}

mod d {
    pub fn gamma() -> f64 {
        0.99
    }
    pub fn tau() -> f64 {
        1e-3
    }
    pub fn lr() -> f64 {
        1e-4
    }
    pub fn batch_size() -> usize {
        256
    }
    pub fn exploration_sigma() -> f64 {
        0.1
    }
}

fn err(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

/// Expands the scalar shorthands into their mapping forms.
fn expand_shorthand(root: &mut Value) {
    let Value::Mapping(map) = root else { return };
    for (key, inner) in [("env", "name"), ("algorithm", "kind")] {
        if let Some(v @ Value::String(_)) = map.get_mut(key) {
            let mut m = Mapping::new();
            m.insert(Value::from(inner), v.clone());
            *v = Value::Mapping(m);
        }
    }
    if let Some(Value::Mapping(alg)) = map.get_mut("algorithm") {
        if let Some(v @ Value::String(_)) = alg.get_mut("distribution") {
            let mut m = Mapping::new();
            m.insert(Value::from("kind"), v.clone());
            *v = Value::Mapping(m);
        }
    }
}

/// Parses, defaults and validates a YAML document.
pub fn load_config(text: &str) -> Result<ExperimentConfig> {
    let mut value: Value = serde_yaml::from_str(text).map_err(|e| err(format!("invalid YAML: {e}")))?;
    if value.is_null() {
        return Err(err("empty document; `env` and `algorithm` are required"));
    }
    expand_shorthand(&mut value);
    let mut cfg: ExperimentConfig = serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        let path = if path == "." { "config".to_string() } else { path };
        err(format!("{path}: {}", e.inner()))
    })?;
    cfg.fill_defaults();
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config_file(path: &std::path::Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| err(format!("cannot read {}: {e}", path.display())))?;
    load_config(&text)
}

fn in_range(path: &str, v: f64, ok: bool, range: &str) -> Result<()> {
    if ok && v.is_finite() {
        Ok(())
    } else {
        Err(err(format!("{path} out of {range} (got {v})")))
    }
}

impl ExperimentConfig {
    fn fill_defaults(&mut self) {
        if self.replay.warm_up.is_none() {
            self.replay.warm_up = Some(10 * self.algorithm.batch_size);
        }
        let d = &mut self.algorithm.distribution;
        match d.kind {
            DistributionKind::None => {}
            DistributionKind::Categorical => {
                d.v_min.get_or_insert(-100.0);
                d.v_max.get_or_insert(100.0);
                d.n_atoms.get_or_insert(101);
            }
            DistributionKind::Quantile => {
                d.n_atoms.get_or_insert(101);
                d.kappa.get_or_insert(1.0);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !ENV_NAMES.contains(&self.env.name.as_str()) {
            return Err(err(format!(
                "env.name: unknown environment '{}'; valid names: {}",
                self.env.name,
                ENV_NAMES.join(", ")
            )));
        }
        let a = &self.algorithm;
        in_range("algorithm.gamma", a.gamma, (0.0..=1.0).contains(&a.gamma), "[0,1]")?;
        in_range("algorithm.tau", a.tau, a.tau > 0.0 && a.tau <= 1.0, "(0,1]")?;
        in_range("algorithm.actor_lr", a.actor_lr, a.actor_lr > 0.0, "(0,inf)")?;
        in_range("algorithm.critic_lr", a.critic_lr, a.critic_lr > 0.0, "(0,inf)")?;
        if a.batch_size == 0 {
            return Err(err("algorithm.batch_size must be at least 1"));
        }
        in_range("algorithm.exploration_sigma", a.exploration_sigma, a.exploration_sigma >= 0.0, "[0,inf)")?;
        in_range(
            "algorithm.td3.smoothing_sigma",
            a.td3.smoothing_sigma,
            a.td3.smoothing_sigma >= 0.0,
            "[0,inf)",
        )?;
        in_range("algorithm.td3.noise_clip", a.td3.noise_clip, a.td3.noise_clip > 0.0, "(0,inf)")?;
        if a.td3.actor_delay == 0 {
            return Err(err("algorithm.td3.actor_delay must be at least 1"));
        }
        in_range("algorithm.sac.reward_scale", a.sac.reward_scale, a.sac.reward_scale > 0.0, "(0,inf)")?;

        let dist = &a.distribution;
        let p = "algorithm.distribution";
        match dist.kind {
            DistributionKind::None => {
                if dist.v_min.is_some() || dist.v_max.is_some() || dist.n_atoms.is_some() || dist.kappa.is_some() {
                    return Err(err(format!("{p}: v_min, v_max, n_atoms and kappa need kind categorical or quantile")));
                }
            }
            DistributionKind::Categorical => {
                let (lo, hi) = (dist.v_min.unwrap_or_default(), dist.v_max.unwrap_or_default());
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    return Err(err(format!("{p}.v_min ({lo}) must be less than {p}.v_max ({hi})")));
                }
                if dist.n_atoms.unwrap_or_default() < 2 {
                    return Err(err(format!("{p}.n_atoms must be at least 2 for a categorical support")));
                }
                if dist.kappa.is_some() {
                    return Err(err(format!("{p}.kappa applies to quantile heads only")));
                }
            }
            DistributionKind::Quantile => {
                if dist.n_atoms.unwrap_or_default() < 1 {
                    return Err(err(format!("{p}.n_atoms must be at least 1")));
                }
                let k = dist.kappa.unwrap_or_default();
                in_range(&format!("{p}.kappa"), k, k > 0.0, "(0,inf)")?;
                if dist.v_min.is_some() || dist.v_max.is_some() {
                    return Err(err(format!("{p}.v_min/v_max apply to categorical heads only")));
                }
            }
        }

        for (i, &h) in self.network.hidden.iter().enumerate() {
            if h == 0 || (self.network.layer_norm && h < 2) {
                return Err(err(format!(
                    "network.hidden[{i}] = {h} is too small{}",
                    if self.network.layer_norm { " for layer norm (need at least 2)" } else { "" }
                )));
            }
        }
        if self.replay.capacity == 0 {
            return Err(err("replay.capacity must be at least 1"));
        }
        if self.replay.n_step == 0 {
            return Err(err("replay.n_step must be at least 1"));
        }
        if self.replay.warm_up == Some(0) {
            return Err(err("replay.warm_up must be at least 1"));
        }
        let dist = &self.distributed;
        if dist.samplers == 0 {
            return Err(err("distributed.samplers must be at least 1"));
        }
        if dist.publish_period == 0 {
            return Err(err("distributed.publish_period must be at least 1"));
        }
        if dist.refresh_period == 0 {
            return Err(err("distributed.refresh_period must be at least 1"));
        }
        if self.run.checkpoint_period == 0 {
            return Err(err("run.checkpoint_period must be at least 1"));
        }
        if let Some(w) = self.run.wall_clock_s {
            in_range("run.wall_clock_s", w, w > 0.0, "(0,inf)")?;
        }
        self.algo_config()
            .validate()
            .map_err(|e| err(format!("algorithm: {e}")))
    }

    pub fn warm_up(&self) -> usize {
        self.replay.warm_up.unwrap_or(10 * self.algorithm.batch_size)
    }

    pub fn algo_config(&self) -> AlgoConfig {
        let a = &self.algorithm;
        let d = &a.distribution;
        let distribution = match d.kind {
            DistributionKind::None => DistributionConfig::None,
            DistributionKind::Categorical => DistributionConfig::Categorical {
                v_min: d.v_min.unwrap_or(-100.0),
                v_max: d.v_max.unwrap_or(100.0),
                n_atoms: d.n_atoms.unwrap_or(101),
            },
            DistributionKind::Quantile => DistributionConfig::Quantile {
                n_atoms: d.n_atoms.unwrap_or(101),
                kappa: d.kappa.unwrap_or(1.0),
            },
        };
        AlgoConfig {
            kind: a.kind.into(),
            gamma: a.gamma,
            tau: a.tau,
            actor_lr: a.actor_lr,
            critic_lr: a.critic_lr,
            batch_size: a.batch_size,
            n_step: self.replay.n_step,
            distribution,
            exploration_sigma: a.exploration_sigma,
            td3: Td3Params {
                smoothing_sigma: a.td3.smoothing_sigma,
                noise_clip: a.td3.noise_clip,
                actor_delay: a.td3.actor_delay,
            },
            sac: SacParams {
                reward_scale: a.sac.reward_scale,
            },
            network: NetworkConfig {
                hidden: self.network.hidden.clone(),
                layer_norm: self.network.layer_norm,
            },
        }
    }

    /// The complete configuration with every default spelled out.
    pub fn dump(&self) -> String {
        serde_yaml::to_string(self).expect("config serializes")
    }

    /// Hash of everything except the `run` section, which only sets budgets
    /// and output paths. A checkpoint can be resumed under any config with
    /// the same setup hash.
    pub fn setup_hash(&self) -> String {
        let mut c = self.clone();
        c.run = RunSection::default();
        c.hash()
    }

    /// SHA-256 of the normalized dump, hex-encoded.
    pub fn hash(&self) -> String {
        Sha256::digest(self.dump().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
