use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use regionseg::metrics::DEFAULT_BAND_RADIUS;
use regionseg::{CorruptionSpec, HeadMode, ModelConfig, Taxonomy, TrainConfig};
use serde::{Deserialize, Serialize};

pub const CONFIG_FILE: &str = "config.json";

/// Everything needed to rerun one experiment. `train` writes it next to
/// the parameters; `predict` reads the model section back from there.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: PathBuf,
    pub out: PathBuf,
    pub taxonomy: Taxonomy,
    pub train: TrainConfig,
    pub model: ModelConfig,
    pub head: HeadMode,
    #[serde(default)]
    pub corruption: CorruptionSpec,
    #[serde(default)]
    pub non_boundary: bool,
    #[serde(default = "default_radius")]
    pub radius: usize,
    pub seed: u64,
}

fn default_radius() -> usize {
    DEFAULT_BAND_RADIUS
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut c: Self = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        c.train.seed = c.seed;
        Ok(c)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join(CONFIG_FILE), self)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}
