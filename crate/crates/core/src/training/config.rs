use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::SkeletonGraph;
use crate::model::{FlexGcnModel, ModelConfig};

/// Training hyperparameters. Serialized as a flat JSON object; absent fields
/// take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub decay: f64,
    pub decay_every: usize,
    pub s: f64,
    pub alpha: f64,
    pub dropout: f64,
    pub hidden: usize,
    pub blocks: usize,
    pub seed: u64,
    pub irc: bool,
    pub symmetry: bool,
    pub modulation: bool,
    /// Fraction of the dataset held out for checkpoint selection.
    pub val_fraction: f64,
    /// Stop after this many optimizer steps, if set.
    pub max_steps: Option<usize>,
    /// Millimeters per regression unit for 3D targets.
    pub target_unit_mm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 512,
            lr0: 0.001,
            decay: 0.99,
            decay_every: 4,
            s: 0.2,
            alpha: 0.03,
            dropout: 0.2,
            hidden: 384,
            blocks: 4,
            seed: 0,
            irc: true,
            symmetry: true,
            modulation: true,
            val_fraction: 0.1,
            max_steps: None,
            target_unit_mm: 1000.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(0.0..=1.0).contains(&self.alpha) {
            return fail(format!("alpha = {} outside [0, 1]", self.alpha));
        }
        if !(self.s > 0.0 && self.s < 1.0) {
            return fail(format!("s = {} outside (0, 1)", self.s));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout = {} outside [0, 1)", self.dropout));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return fail(format!(
                "val_fraction = {} outside [0, 1)",
                self.val_fraction
            ));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.hidden == 0 || self.decay_every == 0 {
            return fail("epochs, batch_size, hidden and decay_every must be positive".into());
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return fail(format!("lr0 = {} must be positive", self.lr0));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return fail(format!("decay = {} outside (0, 1]", self.decay));
        }
        if !(self.target_unit_mm > 0.0 && self.target_unit_mm.is_finite()) {
            return fail(format!(
                "target_unit_mm = {} must be positive",
                self.target_unit_mm
            ));
        }
        if self.max_steps == Some(0) {
            return fail("max_steps must be positive".into());
        }
        Ok(())
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            hidden: self.hidden,
            blocks: self.blocks,
            s: self.s,
            irc: self.irc,
            modulation: self.modulation,
            symmetry: self.symmetry,
            dropout: self.dropout,
            ..ModelConfig::default()
        }
    }

    /// A freshly initialized model for `skeleton`, seeded from `self.seed`.
    pub fn build_model(&self, skeleton: &SkeletonGraph) -> Result<FlexGcnModel> {
        self.validate()?;
        FlexGcnModel::new(self.model_config(), skeleton.clone(), self.seed)
    }
}

/// Step-decayed learning rate `lr0 · decay^⌊epoch / decay_every⌋`.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    let k = epoch / cfg.decay_every.max(1);
    cfg.lr0 * cfg.decay.powi(k.min(i32::MAX as usize) as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_values() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_at(0, &cfg), 0.001);
        assert_eq!(lr_at(3, &cfg), 0.001);
        assert_eq!(lr_at(4, &cfg), 0.001 * 0.99);
        assert!((lr_at(8, &cfg) - 0.00098010).abs() < 1e-15);
    }

    #[test]
    fn json_defaults_and_rejections() {
        let cfg = TrainConfig::from_json_str(r#"{"epochs": 2, "irc": false}"#).unwrap();
        assert_eq!(cfg.epochs, 2);
        assert!(!cfg.irc);
        assert_eq!(cfg.batch_size, 512);
        assert!(TrainConfig::from_json_str(r#"{"epoch": 2}"#).is_err());
        assert!(TrainConfig::from_json_str(r#"{"s": 1.0}"#).is_err());
        assert!(TrainConfig::from_json_str(r#"{"alpha": -0.1}"#).is_err());
        assert!(TrainConfig::from_json_str(r#"{"dropout": 1.0}"#).is_err());
    }
}
