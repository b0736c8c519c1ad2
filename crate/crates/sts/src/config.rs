//! One JSON file describing a complete run: generator, model and optimizer
//! settings plus the seeds to sweep.

use crate::error::{Result, StsError};
use crate::model::ModelConfig;
use crate::repr;
use crate::synth::{synth_topology, SynthConfig};
use crate::train::TrainConfig;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub synth: SynthConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Training seeds; multi-seed commands run one experiment per entry.
    pub seeds: Vec<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            synth: SynthConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            seeds: vec![0, 1, 2],
        }
    }
}

impl RunConfig {
    /// Validates each section and their cross-consistency with the generator
    /// topology.
    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if self.seeds.is_empty() {
            return Err(StsError::Config("need at least one seed".into()));
        }
        let topo = synth_topology();
        if self.model.num_dims != topo.num_dims() {
            return Err(StsError::Config(format!(
                "model.num_dims {} does not match the {}-node generator topology",
                self.model.num_dims,
                topo.num_dims()
            )));
        }
        let f = repr::feature_len(&topo);
        if self.model.feature_len != f {
            return Err(StsError::Config(format!(
                "model.feature_len {} does not match the derived feature length {f}",
                self.model.feature_len
            )));
        }
        if self.model.n_classes != self.synth.n_classes {
            return Err(StsError::Config(format!(
                "model.n_classes {} does not match synth.n_classes {}",
                self.model.n_classes, self.synth.n_classes
            )));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            StsError::Io(std::io::Error::new(
                e.kind(),
                format!("{}: {e}", path.display()),
            ))
        })?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| StsError::Parse(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| StsError::Parse(format!("serialize: {e}")))?;
        crate::io_util::write_atomic(path, text.as_bytes())
    }
}
