//! Run configuration: one JSON document covering data generation, model,
//! training, scoring and artifact paths. Missing fields take defaults and the
//! fully resolved document is written next to every output.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::detect::PerturbConfig;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::synth::GenConfig;
use crate::train::TrainConfig;

pub const RESOLVED_CONFIG: &str = "resolved_config.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Cubes per scoring batch.
    pub batch_size: usize,
    pub threads: usize,
    /// Values scanned by `sweep-eta`.
    pub sweep_etas: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            threads: 1,
            sweep_etas: vec![0.0, 0.0005, 0.001, 0.002, 0.005, 0.01],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: GenConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub perturb: PerturbConfig,
    pub eval: EvalConfig,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: GenConfig::default(),
            model: ModelConfig::raw(),
            train: TrainConfig::default(),
            perturb: PerturbConfig::default(),
            eval: EvalConfig::default(),
            paths: Paths::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.perturb.validate()?;
        if self.eval.batch_size == 0 || self.eval.threads == 0 {
            return Err(Error::Config("eval batch_size and threads must be positive".into()));
        }
        if self.model.in_channels != 3 {
            return Err(Error::Config(format!(
                "model.in_channels must be 3 for RGB clips, got {}",
                self.model.in_channels
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn write_resolved(&self, dir: &Path) -> Result<()> {
        fs::write(dir.join(RESOLVED_CONFIG), self.to_json())?;
        Ok(())
    }
}
