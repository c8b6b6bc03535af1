//! Run configuration: one TOML file, one seed, schema-checked before any
//! compute.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{BaseSpec, ShiftSpec};
use crate::error::{Error, Result};
use crate::pipeline::ProtocolSpec;
use crate::stats::CostSpec;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub base: BaseSpec,
    pub shift: ShiftSpec,
    pub secondary_shift: Option<ShiftSpec>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { base: BaseSpec::default(), shift: default_shift(), secondary_shift: None }
    }
}

/// The shift used by the default bundle: a scanner change that blurs and
/// adds a little sensor noise.
pub fn default_shift() -> ShiftSpec {
    let mut s = ShiftSpec::identity();
    s.technology.blur_sigma = 1.0;
    s.technology.noise = 0.03;
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportConfig {
    /// Strategy compared against every other one.
    pub reference: String,
    pub metric: String,
    pub ci_level: f64,
    /// Subgroups smaller than this are flagged.
    pub subgroup_floor: usize,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig { reference: "remedis".into(), metric: "accuracy".into(), ci_level: 0.95, subgroup_floor: 30 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub seed: u64,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub protocol: ProtocolSpec,
    #[serde(default)]
    pub report: ReportConfig,
    #[serde(default)]
    pub costs: Vec<CostSpec>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            data: DataConfig::default(),
            protocol: ProtocolSpec::default(),
            report: ReportConfig::default(),
            costs: Vec::new(),
            output_dir: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.data.base.validate()?;
        self.data.shift.validate(&self.data.base)?;
        if let Some(s) = &self.data.secondary_shift {
            s.validate(&self.data.base)?;
        }
        self.protocol.validate()?;
        for c in &self.costs {
            c.validate()?;
        }
        if !(self.report.ci_level > 0.0 && self.report.ci_level < 1.0) {
            return Err(Error::Config(format!("ci_level {} outside (0, 1)", self.report.ci_level)));
        }
        crate::pipeline::Strategy::parse(&self.report.reference)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = RunConfig::from_toml("schema_version = 1\nseed = 7\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.protocol, ProtocolSpec::default());
        assert_eq!(cfg.data.shift, default_shift());
    }

    #[test]
    fn round_trips() {
        let cfg = RunConfig { seed: 11, ..Default::default() };
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn rejects_unknown_keys_and_versions() {
        assert!(RunConfig::from_toml("schema_version = 1\nseed = 1\nsede = 2\n").is_err());
        assert!(RunConfig::from_toml("schema_version = 1\nseed = 1\n[protocol]\nrepeat = 3\n").is_err());
        assert!(RunConfig::from_toml("schema_version = 2\nseed = 1\n").is_err());
        assert!(RunConfig::from_toml("seed = 1\n").is_err());
    }

    #[test]
    fn rejects_invalid_values() {
        assert!(RunConfig::from_toml("schema_version = 1\nseed = 1\n[protocol]\nrepeats = 1\n").is_err());
        assert!(RunConfig::from_toml("schema_version = 1\nseed = 1\n[data.shift.behavior]\nlabel_noise = 0.5\n").is_err());
        assert!(RunConfig::from_toml("schema_version = 1\nseed = 1\n[report]\nreference = \"nope\"\n").is_err());
    }
}
