//! On-disk layout of a protocol run.
//!
//! ```text
//! metrics.csv     strategy,arch,scenario,fraction,repeat,metric_name,value,seed,wall_seconds
//! subgroups.csv   per-cell accuracy restricted to each subgroup
//! failures.csv    cells that raised an error
//! timings.csv     measured wall-clock seconds per cell
//! manifest.json   seeds, spec, data and encoder hashes, notes
//! pretrain.json   pretraining summaries and loss histories
//! grids.json      hyper-parameter leaderboards
//! config.toml     the run configuration (when written by the CLI)
//! ```

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::pipeline::{CellFailure, Manifest, MetricRow, ProtocolResult, SubgroupRow, Timing};

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUBGROUPS_FILE: &str = "subgroups.csv";
pub const FAILURES_FILE: &str = "failures.csv";
pub const TIMINGS_FILE: &str = "timings.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PRETRAIN_FILE: &str = "pretrain.json";
pub const GRIDS_FILE: &str = "grids.json";
pub const CONFIG_FILE: &str = "config.toml";

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a CSV written by [`write_csv`]. A file with no header reads as
/// no rows.
pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// SHA-256 of the manifest file's bytes.
pub fn manifest_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes every artifact of `result` into `dir` and returns the manifest
/// hash.
pub fn write_results(dir: &Path, result: &ProtocolResult, config: Option<&RunConfig>) -> Result<String> {
    fs::create_dir_all(dir)?;
    write_csv(&dir.join(METRICS_FILE), &result.rows)?;
    write_csv(&dir.join(SUBGROUPS_FILE), &result.subgroups)?;
    write_csv(&dir.join(FAILURES_FILE), &result.failures)?;
    write_csv(&dir.join(TIMINGS_FILE), &result.timings)?;
    write_json(&dir.join(MANIFEST_FILE), &result.manifest)?;
    write_json(&dir.join(PRETRAIN_FILE), &result.pretrain)?;
    write_json(&dir.join(GRIDS_FILE), &result.grids)?;
    if let Some(cfg) = config {
        fs::write(dir.join(CONFIG_FILE), cfg.to_toml()?)?;
    }
    Ok(manifest_hash(&fs::read(dir.join(MANIFEST_FILE))?))
}

/// What the report needs from a results directory.
#[derive(Debug, Clone)]
pub struct Results {
    pub rows: Vec<MetricRow>,
    pub subgroups: Vec<SubgroupRow>,
    pub failures: Vec<CellFailure>,
    pub manifest: Manifest,
    pub manifest_hash: String,
    pub config: Option<RunConfig>,
}

pub fn load_results(dir: &Path) -> Result<Results> {
    if !dir.is_dir() {
        return Err(Error::Config(format!("results directory {} does not exist", dir.display())));
    }
    let manifest_path = dir.join(MANIFEST_FILE);
    let metrics_path = dir.join(METRICS_FILE);
    if !manifest_path.is_file() || !metrics_path.is_file() {
        return Err(Error::Config(format!(
            "{} holds no protocol results ({MANIFEST_FILE} and {METRICS_FILE} are required)",
            dir.display()
        )));
    }
    let bytes = fs::read(&manifest_path)?;
    let manifest: Manifest = serde_json::from_slice(&bytes)?;
    let rows: Vec<MetricRow> = read_csv(&metrics_path)?;
    if rows.is_empty() {
        return Err(Error::Config(format!("{} has no metric rows", metrics_path.display())));
    }
    let optional = |name: &str| dir.join(name).is_file().then(|| dir.join(name));
    let subgroups = optional(SUBGROUPS_FILE).map(|p| read_csv(&p)).transpose()?.unwrap_or_default();
    let failures = optional(FAILURES_FILE).map(|p| read_csv(&p)).transpose()?.unwrap_or_default();
    let config = optional(CONFIG_FILE).map(|p| RunConfig::load(&p)).transpose()?;
    Ok(Results { rows, subgroups, failures, manifest, manifest_hash: manifest_hash(&bytes), config })
}

pub fn read_timings(dir: &Path) -> Result<Vec<Timing>> {
    read_csv(&dir.join(TIMINGS_FILE))
}
