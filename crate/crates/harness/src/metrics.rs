//! Append-only CSV metrics, one row per finished episode.

use std::fs::{File, OpenOptions};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub const COLUMNS: [&str; 11] = [
    "wall_time_s",
    "env_steps_total",
    "updates_total",
    "episode_index",
    "episode_return",
    "weight_version",
    "critic1_loss",
    "critic2_loss",
    "actor_loss",
    "mode",
    "config_hash",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub wall_time_s: f64,
    pub env_steps_total: u64,
    pub updates_total: u64,
    /// Empty on trainer rows, which are not tied to an episode.
    pub episode_index: Option<u64>,
    pub episode_return: Option<f64>,
    pub weight_version: u64,
    pub critic1_loss: Option<f64>,
    pub critic2_loss: Option<f64>,
    pub actor_loss: Option<f64>,
    /// `train` or `eval`.
    pub mode: String,
    pub config_hash: String,
}

/// Single writer; every row is flushed so an interrupted run keeps all
/// completed episodes.
pub struct MetricsWriter {
    inner: csv::Writer<File>,
}

impl MetricsWriter {
    /// Opens `path` for appending and writes the header if the file is new
    /// or empty.
    pub fn open(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        let fresh = file.metadata()?.len() == 0;
        let mut inner = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        if fresh {
            inner.write_record(COLUMNS)?;
            inner.flush()?;
        }
        Ok(MetricsWriter { inner })
    }

    pub fn write(&mut self, row: &MetricsRow) -> Result<()> {
        self.inner.serialize(row)?;
        self.inner.flush()?;
        Ok(())
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<Vec<MetricsRow>, csv::Error>>()?)
}
