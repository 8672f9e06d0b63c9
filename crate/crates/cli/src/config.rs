//! Run configuration file: one TOML document with every module section.

use std::path::{Path, PathBuf};

use bridge_twin::ml::ForestConfig;
use bridge_twin::montecarlo::{default_mc_scenario, McConfig};
use bridge_twin::pipeline::ScenarioConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InputPaths {
    pub detections: Option<PathBuf>,
    pub weather: Option<PathBuf>,
    pub features: Vec<PathBuf>,
    pub model: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
    /// Write the full per-cell density field (large for long runs).
    pub write_states: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: None,
            write_states: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSettings {
    pub seed: u64,
    /// Simulated seconds for `simulate`.
    pub duration: f64,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            seed: 42,
            duration: 3600.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub inputs: InputPaths,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub run: RunSettings,
    /// Absent: defaults, except that `mc` uses the winter-storm ensemble
    /// scenario.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<ScenarioConfig>,
    #[serde(default)]
    pub forest: ForestConfig,
    #[serde(default)]
    pub mc: McConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            inputs: InputPaths::default(),
            output: OutputConfig::default(),
            run: RunSettings::default(),
            scenario: None,
            forest: ForestConfig::default(),
            mc: McConfig::default(),
        }
    }
}

impl RunConfig {
    /// Loads a config file; relative input paths resolve against its
    /// directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| CliError::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(CliError::Config {
                path: path.to_path_buf(),
                message: format!(
                    "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                    cfg.schema_version
                ),
            });
        }
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = cfg.inputs.detections.as_mut() {
            rebase(p);
        }
        if let Some(p) = cfg.inputs.weather.as_mut() {
            rebase(p);
        }
        if let Some(p) = cfg.inputs.model.as_mut() {
            rebase(p);
        }
        cfg.inputs.features.iter_mut().for_each(rebase);
        if let Some(p) = cfg.output.dir.as_mut() {
            rebase(p);
        }
        Ok(cfg)
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self, CliError> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn scenario(&self) -> ScenarioConfig {
        self.scenario.clone().unwrap_or_default()
    }

    pub fn mc_scenario(&self) -> ScenarioConfig {
        self.scenario.clone().unwrap_or_else(default_mc_scenario)
    }

    /// SHA-256 of the effective configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serialises");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}
