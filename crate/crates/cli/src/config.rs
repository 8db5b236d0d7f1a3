use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use langnav_core::datastore::DatasetConfig;
use langnav_core::navctl::NavConfig;
use langnav_core::oracle::OracleConfig;
use langnav_grounder::{ModelConfig, TrainConfig};

/// Every knob of every subcommand, resolved as defaults < config file < flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Single source of randomness; copied into the dataset and training seeds.
    pub seed: u64,
    pub threads: usize,
    pub port: u16,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub nav: NavConfig,
    pub oracle: OracleConfig,
    pub paths: Paths,
    /// Pause between annotation frames while driving, in milliseconds.
    pub frame_interval_ms: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub split: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub plots: Option<PathBuf>,
    pub episode: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let dataset = DatasetConfig::default();
        Self {
            seed: dataset.seed,
            threads: 1,
            port: 7878,
            nav: dataset.nav,
            oracle: dataset.oracle,
            dataset,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            paths: Paths::default(),
            frame_interval_ms: 200,
        }
    }
}

/// Recursively overlays `top` onto `base`; objects merge, everything else replaces.
pub fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

impl RunConfig {
    pub fn resolve(file: Option<&Path>, flags: Value) -> Result<Self> {
        let mut v = serde_json::to_value(RunConfig::default())?;
        if let Some(path) = file {
            let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            let parsed: Value = serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
            merge(&mut v, parsed);
        }
        merge(&mut v, flags);
        let mut cfg: RunConfig = serde_json::from_value(v).context("invalid configuration")?;
        cfg.dataset.seed = cfg.seed;
        cfg.train.seed = cfg.seed;
        // Dataset recording and live runs share one navigation setup.
        cfg.dataset.nav = cfg.nav;
        cfg.dataset.oracle = cfg.oracle;
        cfg.model.validate().map_err(anyhow::Error::msg)?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Writes the resolved configuration next to an artifact.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, self.to_json()).with_context(|| format!("writing {}", path.display()))
    }
}

/// `<artifact>.run.json`
pub fn sidecar_for(artifact: &Path) -> PathBuf {
    let mut s = artifact.as_os_str().to_owned();
    s.push(".run.json");
    PathBuf::from(s)
}
