//! Pose samples, datasets, the JSON-lines file format, batching and the
//! synthetic skeleton generator.

mod io;
mod synth;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use io::{load, parse_jsonl, save, write_jsonl};
pub use synth::{synthesize, AngleRange, SynthConfig, ACTION_FAMILIES};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Pinhole camera: focal length and principal point, both in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub f: f64,
    pub c: [f64; 2],
}

/// One paired observation: `N×2` normalized image coordinates and `N×3`
/// root-relative millimeters.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSample {
    pub joints_2d: Matrix,
    pub joints_3d: Matrix,
    pub action: Option<String>,
    pub camera: Camera,
}

impl PoseSample {
    pub fn new(
        joints_2d: Matrix,
        joints_3d: Matrix,
        action: Option<String>,
        camera: Camera,
    ) -> Result<Self> {
        if joints_2d.cols() != 2 || joints_3d.cols() != 3 || joints_2d.rows() != joints_3d.rows() {
            return Err(Error::shape(
                "PoseSample",
                joints_2d.shape(),
                joints_3d.shape(),
            ));
        }
        if !joints_2d.is_finite() || !joints_3d.is_finite() {
            return Err(Error::Domain(
                "pose sample contains non-finite values".into(),
            ));
        }
        Ok(Self {
            joints_2d,
            joints_3d,
            action,
            camera,
        })
    }

    pub fn n_joints(&self) -> usize {
        self.joints_2d.rows()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub samples: Vec<PoseSample>,
}

impl Dataset {
    pub fn new(samples: Vec<PoseSample>) -> Self {
        Self { samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Splits off the last `ceil(fraction · len)` samples as a held-out set.
    /// The split is positional; synthetic data is already i.i.d.
    pub fn split_holdout(&self, fraction: f64) -> Result<(Dataset, Dataset)> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(Error::Domain(format!(
                "holdout fraction {fraction} outside [0, 1)"
            )));
        }
        let held = ((self.len() as f64) * fraction).ceil() as usize;
        let held = held.min(self.len().saturating_sub(1));
        let cut = self.len() - held;
        Ok((
            Dataset::new(self.samples[..cut].to_vec()),
            Dataset::new(self.samples[cut..].to_vec()),
        ))
    }
}

/// Index batches for one epoch: a permutation seeded by `(seed, epoch)`,
/// chunked into `batch_size`, final partial batch included.
pub fn batches(n: usize, batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Domain("batch size must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}
