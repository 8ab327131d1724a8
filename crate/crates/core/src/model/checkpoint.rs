use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::graph::SkeletonGraph;
use crate::numerics::Matrix;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

/// JSON container of model parameters with the configuration and skeleton
/// they belong to. Floats are written in shortest round-trip form, so a
/// save/load cycle is bit-exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config_hash: String,
    pub config: ModelConfig,
    pub skeleton: SkeletonGraph,
    pub tensors: Vec<TensorRecord>,
}

impl Checkpoint {
    pub fn new(config: &ModelConfig, skeleton: &SkeletonGraph, params: &ModelParams) -> Self {
        Self {
            format_version: CHECKPOINT_FORMAT_VERSION,
            config_hash: Self::hash_of(config, skeleton),
            config: config.clone(),
            skeleton: skeleton.clone(),
            tensors: params
                .iter()
                .map(|(name, m)| TensorRecord {
                    name: name.to_string(),
                    rows: m.rows(),
                    cols: m.cols(),
                    data: m.data().to_vec(),
                })
                .collect(),
        }
    }

    /// SHA-256 over the canonical JSON of the configuration and skeleton.
    pub fn hash_of(config: &ModelConfig, skeleton: &SkeletonGraph) -> String {
        let mut hasher = Sha256::new();
        hasher.update(serde_json::to_vec(config).expect("config serializes"));
        hasher.update(serde_json::to_vec(skeleton).expect("skeleton serializes"));
        hex::encode(hasher.finalize())
    }

    pub fn verify_hash(&self) -> Result<()> {
        if self.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Topology(format!(
                "unsupported checkpoint version {}",
                self.format_version
            )));
        }
        let expected = Self::hash_of(&self.config, &self.skeleton);
        if expected != self.config_hash {
            return Err(Error::Topology(
                "checkpoint config hash does not match its contents".into(),
            ));
        }
        Ok(())
    }

    pub fn params(&self) -> Result<ModelParams> {
        let entries = self
            .tensors
            .iter()
            .map(|t| Ok((t.name.clone(), Matrix::new(t.rows, t.cols, t.data.clone())?)))
            .collect::<Result<Vec<_>>>()?;
        ModelParams::from_entries(entries)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&s)?)
    }
}
