use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::trainer::{train, EpochRecord};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::graph::SkeletonGraph;

/// Architecture switch compared by [`ablate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AblationFlag {
    Irc,
    Symmetry,
    Modulation,
}

impl AblationFlag {
    pub fn name(self) -> &'static str {
        match self {
            AblationFlag::Irc => "irc",
            AblationFlag::Symmetry => "symmetry",
            AblationFlag::Modulation => "modulation",
        }
    }

    pub fn apply(self, cfg: &mut TrainConfig, on: bool) {
        match self {
            AblationFlag::Irc => cfg.irc = on,
            AblationFlag::Symmetry => cfg.symmetry = on,
            AblationFlag::Modulation => cfg.modulation = on,
        }
    }
}

impl fmt::Display for AblationFlag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AblationFlag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "irc" => Ok(AblationFlag::Irc),
            "symmetry" => Ok(AblationFlag::Symmetry),
            "modulation" => Ok(AblationFlag::Modulation),
            other => Err(Error::Config(format!("unknown ablation flag {other:?}"))),
        }
    }
}

/// Hyperparameter varied by [`sweep`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    BatchSize,
    Hidden,
    S,
    Alpha,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::BatchSize => "batch_size",
            SweepParam::Hidden => "hidden",
            SweepParam::S => "s",
            SweepParam::Alpha => "alpha",
        }
    }

    pub fn apply(self, cfg: &mut TrainConfig, value: f64) -> Result<()> {
        let count = |v: f64| {
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::Config(format!(
                    "{} needs a positive integer, got {v}",
                    self.name()
                )))
            }
        };
        match self {
            SweepParam::BatchSize => cfg.batch_size = count(value)?,
            SweepParam::Hidden => cfg.hidden = count(value)?,
            SweepParam::S => cfg.s = value,
            SweepParam::Alpha => cfg.alpha = value,
        }
        cfg.validate()
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "batch_size" => Ok(SweepParam::BatchSize),
            "hidden" => Ok(SweepParam::Hidden),
            "s" => Ok(SweepParam::S),
            "alpha" => Ok(SweepParam::Alpha),
            other => Err(Error::Config(format!("unknown sweep parameter {other:?}"))),
        }
    }
}

/// Outcome of one training run inside a comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub label: String,
    pub config: TrainConfig,
    pub final_val_mpjpe: f64,
    pub final_val_pa_mpjpe: f64,
    pub best_val_mpjpe: f64,
    pub best_epoch: usize,
    pub steps: usize,
    pub history: Vec<EpochRecord>,
}

/// Paired runs differing only in one switch. Deltas are `without - with`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub flag: AblationFlag,
    pub with: RunSummary,
    pub without: RunSummary,
    pub delta_val_mpjpe: f64,
    pub delta_val_pa_mpjpe: f64,
}

pub fn run_labeled(
    label: &str,
    cfg: &TrainConfig,
    dataset: &Dataset,
    skeleton: &SkeletonGraph,
) -> Result<RunSummary> {
    let model = cfg.build_model(skeleton)?;
    let mut history = Vec::new();
    let out = train(model, dataset, cfg, &mut history)?;
    let last = history.last().expect("training records at least one epoch");
    Ok(RunSummary {
        label: label.to_string(),
        config: cfg.clone(),
        final_val_mpjpe: last.val_mpjpe,
        final_val_pa_mpjpe: last.val_pa_mpjpe,
        best_val_mpjpe: out.best_val_mpjpe,
        best_epoch: out.best_epoch,
        steps: out.steps,
        history,
    })
}

/// Trains `base` with `flag` on and off from the same seed and data.
pub fn ablate(
    flag: AblationFlag,
    base: &TrainConfig,
    dataset: &Dataset,
    skeleton: &SkeletonGraph,
) -> Result<AblationReport> {
    let mut on = base.clone();
    flag.apply(&mut on, true);
    let mut off = base.clone();
    flag.apply(&mut off, false);
    let with = run_labeled(&format!("{flag}_on"), &on, dataset, skeleton)?;
    let without = run_labeled(&format!("{flag}_off"), &off, dataset, skeleton)?;
    Ok(AblationReport {
        flag,
        delta_val_mpjpe: without.final_val_mpjpe - with.final_val_mpjpe,
        delta_val_pa_mpjpe: without.final_val_pa_mpjpe - with.final_val_pa_mpjpe,
        with,
        without,
    })
}

/// One run per value of `param`, everything else taken from `base`.
pub fn sweep(
    param: SweepParam,
    values: &[f64],
    base: &TrainConfig,
    dataset: &Dataset,
    skeleton: &SkeletonGraph,
) -> Result<Vec<RunSummary>> {
    values
        .iter()
        .map(|&v| {
            let mut cfg = base.clone();
            param.apply(&mut cfg, v)?;
            run_labeled(&format!("{}={v}", param.name()), &cfg, dataset, skeleton)
        })
        .collect()
}

/// Every `(s, alpha)` combination, row-major in `s`.
pub fn grid_s_alpha(
    s_values: &[f64],
    alpha_values: &[f64],
    base: &TrainConfig,
    dataset: &Dataset,
    skeleton: &SkeletonGraph,
) -> Result<Vec<RunSummary>> {
    let mut out = Vec::with_capacity(s_values.len() * alpha_values.len());
    for &s in s_values {
        for &alpha in alpha_values {
            let mut cfg = base.clone();
            SweepParam::S.apply(&mut cfg, s)?;
            SweepParam::Alpha.apply(&mut cfg, alpha)?;
            out.push(run_labeled(
                &format!("s={s},alpha={alpha}"),
                &cfg,
                dataset,
                skeleton,
            )?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_parse_and_apply() {
        let mut cfg = TrainConfig::default();
        for name in ["irc", "symmetry", "modulation"] {
            let flag: AblationFlag = name.parse().unwrap();
            assert_eq!(flag.to_string(), name);
            flag.apply(&mut cfg, false);
        }
        assert!(!cfg.irc && !cfg.symmetry && !cfg.modulation);
        assert!("dropout".parse::<AblationFlag>().is_err());
    }

    #[test]
    fn sweep_values_validated() {
        let mut cfg = TrainConfig::default();
        assert!(SweepParam::Hidden.apply(&mut cfg, 2.5).is_err());
        assert!(SweepParam::S
            .apply(&mut TrainConfig::default(), 1.0)
            .is_err());
        let mut cfg = TrainConfig::default();
        SweepParam::BatchSize.apply(&mut cfg, 64.0).unwrap();
        assert_eq!(cfg.batch_size, 64);
    }
}
