//! Parameter checkpoints: a JSON container mapping hierarchical parameter
//! names (`stream.block.layer.kind`) to shape + row-major values.
//!
//! Values are serialized with shortest round-trip decimal representation,
//! so save/load is value-exact.

use crate::error::{Result, StsError};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Serialize, Deserialize)]
struct Entry {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct File {
    format: String,
    params: BTreeMap<String, Entry>,
}

const FORMAT: &str = "sts-checkpoint-v1";

/// An ordered name -> tensor map.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub params: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn insert(&mut self, name: &str, tensor: &Tensor) {
        self.params.insert(name.to_string(), tensor.clone());
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| StsError::Input(format!("checkpoint is missing parameter '{name}'")))
    }

    pub fn names(&self) -> Vec<&str> {
        self.params.keys().map(|s| s.as_str()).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File {
            format: FORMAT.to_string(),
            params: self
                .params
                .iter()
                .map(|(k, t)| {
                    (
                        k.clone(),
                        Entry {
                            shape: t.shape().to_vec(),
                            data: t.data().to_vec(),
                        },
                    )
                })
                .collect(),
        };
        let json = serde_json::to_string(&file)
            .map_err(|e| StsError::Parse(format!("checkpoint serialization: {e}")))?;
        crate::io_util::write_atomic(path, json.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: File = serde_json::from_str(&text)
            .map_err(|e| StsError::Parse(format!("checkpoint {}: {e}", path.display())))?;
        if file.format != FORMAT {
            return Err(StsError::Parse(format!(
                "unsupported checkpoint format '{}'",
                file.format
            )));
        }
        let mut params = BTreeMap::new();
        for (name, entry) in file.params {
            params.insert(name, Tensor::new(entry.shape, entry.data)?);
        }
        Ok(Checkpoint { params })
    }
}
