//! Pose-error metrics: MPJPE (optionally root-aligned), Procrustes-aligned
//! MPJPE, PCK and AUC.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Default PCK threshold in millimeters.
pub const PCK_THRESHOLD_MM: f64 = 150.0;

/// `0, 5, ..., 150` mm.
pub fn default_auc_grid() -> Vec<f64> {
    (0..=30).map(|k| 5.0 * k as f64).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// MPJPE without alignment.
    Raw,
    /// MPJPE after translating both poses to a common root.
    RootAligned,
    /// MPJPE after similarity (Procrustes) alignment.
    Procrustes,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PoseError {
    pub per_joint: Vec<f64>,
    pub mean: f64,
    pub protocol: Protocol,
}

impl PoseError {
    fn from_points(a: &[Vector3<f64>], b: &[Vector3<f64>], protocol: Protocol) -> Self {
        let per_joint: Vec<f64> = a.iter().zip(b).map(|(p, q)| (p - q).norm()).collect();
        let mean = per_joint.iter().sum::<f64>() / per_joint.len() as f64;
        Self {
            per_joint,
            mean,
            protocol,
        }
    }
}

fn points(m: &Matrix) -> Vec<Vector3<f64>> {
    (0..m.rows())
        .map(|i| Vector3::new(m.get(i, 0), m.get(i, 1), m.get(i, 2)))
        .collect()
}

fn check_poses(y: &Matrix, y_hat: &Matrix, op: &'static str) -> Result<()> {
    if y.shape() != y_hat.shape() || y.cols() != 3 {
        return Err(Error::shape(op, y.shape(), y_hat.shape()));
    }
    if y.rows() == 0 {
        return Err(Error::Domain(format!("{op}: empty pose")));
    }
    Ok(())
}

/// Mean per-joint Euclidean distance. With `root` set, both poses are first
/// translated so that joint `root` sits at the origin.
pub fn mpjpe(y: &Matrix, y_hat: &Matrix, root: Option<usize>) -> Result<PoseError> {
    check_poses(y, y_hat, "mpjpe")?;
    let (mut a, mut b) = (points(y), points(y_hat));
    let protocol = match root {
        Some(r) => {
            if r >= a.len() {
                return Err(Error::Domain(format!("root {r} out of range")));
            }
            let (ra, rb) = (a[r], b[r]);
            a.iter_mut().for_each(|p| *p -= ra);
            b.iter_mut().for_each(|p| *p -= rb);
            Protocol::RootAligned
        }
        None => Protocol::Raw,
    };
    Ok(PoseError::from_points(&a, &b, protocol))
}

/// Similarity transform `x ↦ scale · R x + t` mapping one point set onto another.
#[derive(Debug, Clone, PartialEq)]
pub struct Similarity {
    pub rotation: Matrix3<f64>,
    pub scale: f64,
    pub translation: Vector3<f64>,
}

impl Similarity {
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.scale * (self.rotation * p) + self.translation
    }
}

/// Least-squares similarity aligning `source` onto `target`.
///
/// Proper rotations only: the determinant sign is corrected so reflections
/// are never used.
pub fn procrustes(target: &Matrix, source: &Matrix) -> Result<Similarity> {
    check_poses(target, source, "procrustes")?;
    let (x, y) = (points(target), points(source));
    let n = x.len() as f64;
    let mx = x.iter().sum::<Vector3<f64>>() / n;
    let my = y.iter().sum::<Vector3<f64>>() / n;
    let xc: Vec<_> = x.iter().map(|p| p - mx).collect();
    let yc: Vec<_> = y.iter().map(|p| p - my).collect();

    let target_spread: f64 = xc.iter().map(|p| p.norm_squared()).sum();
    if target_spread == 0.0 {
        return Err(Error::Domain(
            "target pose has all joints coincident".into(),
        ));
    }
    let source_spread: f64 = yc.iter().map(|p| p.norm_squared()).sum();

    // cross-covariance Σ x_i y_iᵀ
    let mut cov = Matrix3::zeros();
    for (p, q) in xc.iter().zip(&yc) {
        cov += p * q.transpose();
    }
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let d = (u * v_t).determinant().signum();
    let correction = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d));
    let rotation = u * correction * v_t;
    let sv = svd.singular_values;
    let trace = sv[0] + sv[1] + d * sv[2];
    let scale = if source_spread > 0.0 {
        trace / source_spread
    } else {
        0.0
    };
    let translation = mx - scale * (rotation * my);
    Ok(Similarity {
        rotation,
        scale,
        translation,
    })
}

/// MPJPE after aligning `y_hat` to `y` with the optimal similarity transform.
pub fn pa_mpjpe(y: &Matrix, y_hat: &Matrix) -> Result<PoseError> {
    let sim = procrustes(y, y_hat)?;
    let aligned: Vec<_> = points(y_hat).iter().map(|p| sim.apply(p)).collect();
    Ok(PoseError::from_points(
        &points(y),
        &aligned,
        Protocol::Procrustes,
    ))
}

/// Fraction of joint errors strictly below `threshold`.
pub fn pck_from_errors(errors: &[f64], threshold: f64) -> f64 {
    if errors.is_empty() {
        return 0.0;
    }
    errors.iter().filter(|&&e| e < threshold).count() as f64 / errors.len() as f64
}

/// Mean PCK over `grid`.
pub fn auc_from_errors(errors: &[f64], grid: &[f64]) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::Domain("AUC threshold grid is empty".into()));
    }
    Ok(grid
        .iter()
        .map(|&t| pck_from_errors(errors, t))
        .sum::<f64>()
        / grid.len() as f64)
}

/// PCK at `threshold` and AUC over `auc_grid`, on root-aligned errors.
pub fn pck_auc(
    y: &Matrix,
    y_hat: &Matrix,
    root: usize,
    threshold: f64,
    auc_grid: &[f64],
) -> Result<(f64, f64)> {
    if threshold <= 0.0 {
        return Err(Error::Domain(format!(
            "PCK threshold {threshold} must be positive"
        )));
    }
    if auc_grid.iter().any(|t| *t < 0.0) {
        return Err(Error::Domain("AUC thresholds must be non-negative".into()));
    }
    let err = mpjpe(y, y_hat, Some(root))?;
    Ok((
        pck_from_errors(&err.per_joint, threshold),
        auc_from_errors(&err.per_joint, auc_grid)?,
    ))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mpjpe_mm: f64,
    pub pa_mpjpe_mm: f64,
    pub pck: f64,
    pub auc: f64,
    pub samples: usize,
}

/// Evaluation report. `per_action` is present when any sample carries an
/// action label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mpjpe_mm: f64,
    pub pa_mpjpe_mm: f64,
    pub pck: f64,
    pub auc: f64,
    pub samples: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub per_action: Option<BTreeMap<String, MetricSummary>>,
}

#[derive(Default)]
struct Accumulator {
    mpjpe: f64,
    pa: f64,
    errors: Vec<f64>,
    samples: usize,
}

impl Accumulator {
    fn summary(&self, grid: &[f64]) -> Result<MetricSummary> {
        let n = self.samples.max(1) as f64;
        Ok(MetricSummary {
            mpjpe_mm: self.mpjpe / n,
            pa_mpjpe_mm: self.pa / n,
            pck: pck_from_errors(&self.errors, PCK_THRESHOLD_MM),
            auc: auc_from_errors(&self.errors, grid)?,
            samples: self.samples,
        })
    }
}

impl EvalReport {
    /// Aggregates `(target, prediction, action)` triples, all in millimeters.
    /// MPJPE is root-aligned; PCK/AUC use the default threshold and grid.
    pub fn from_pairs<'a, I>(pairs: I, root: usize) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a Matrix, &'a Matrix, Option<&'a str>)>,
    {
        let grid = default_auc_grid();
        let mut all = Accumulator::default();
        let mut by_action: BTreeMap<String, Accumulator> = BTreeMap::new();
        for (y, y_hat, action) in pairs {
            let e = mpjpe(y, y_hat, Some(root))?;
            let pa = pa_mpjpe(y, y_hat)?.mean;
            let mut accs = vec![&mut all];
            if let Some(a) = action {
                accs.push(by_action.entry(a.to_string()).or_default());
            }
            for acc in accs {
                acc.mpjpe += e.mean;
                acc.pa += pa;
                acc.errors.extend_from_slice(&e.per_joint);
                acc.samples += 1;
            }
        }
        if all.samples == 0 {
            return Err(Error::Domain("no samples to evaluate".into()));
        }
        let s = all.summary(&grid)?;
        let per_action = if by_action.is_empty() {
            None
        } else {
            Some(
                by_action
                    .iter()
                    .map(|(k, acc)| Ok((k.clone(), acc.summary(&grid)?)))
                    .collect::<Result<_>>()?,
            )
        };
        Ok(Self {
            mpjpe_mm: s.mpjpe_mm,
            pa_mpjpe_mm: s.pa_mpjpe_mm,
            pck: s.pck,
            auc: s.auc,
            samples: s.samples,
            per_action,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pose(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
        Matrix::uniform(n, 3, -500.0, 500.0, rng)
    }

    fn offset(m: &Matrix, d: [f64; 3]) -> Matrix {
        Matrix::from_fn(m.rows(), 3, |i, j| m.get(i, j) + d[j])
    }

    #[test]
    fn mpjpe_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let y = random_pose(&mut rng, 17);
        assert_eq!(mpjpe(&y, &y, None).unwrap().mean, 0.0);
        let shifted = offset(&y, [10.0, 0.0, 0.0]);
        assert!((mpjpe(&y, &shifted, None).unwrap().mean - 10.0).abs() < 1e-9);
        assert!(mpjpe(&y, &shifted, Some(0)).unwrap().mean < 1e-9);
        assert!(mpjpe(&y, &Matrix::zeros(16, 3), None).is_err());
    }

    #[test]
    fn pa_mpjpe_removes_similarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let y = random_pose(&mut rng, 17);
            let r = Rotation3::from_euler_angles(rng.gen(), rng.gen(), rng.gen());
            let c = rng.gen_range(0.5..2.0);
            let t = Vector3::new(rng.gen(), rng.gen(), rng.gen()) * 100.0;
            let moved = points(&y)
                .iter()
                .map(|p| c * (r * p) + t)
                .collect::<Vec<_>>();
            let y_hat = Matrix::from_fn(17, 3, |i, j| moved[i][j]);
            assert!(pa_mpjpe(&y, &y_hat).unwrap().mean < 1e-8);
        }
    }

    #[test]
    fn mirror_image_is_not_aligned() {
        let y = Matrix::from_rows(&[
            [0.0, 0.0, 0.0],
            [100.0, 0.0, 0.0],
            [0.0, 200.0, 0.0],
            [0.0, 0.0, 300.0],
        ])
        .unwrap();
        let mirrored =
            Matrix::from_fn(4, 3, |i, j| if j == 0 { -y.get(i, j) } else { y.get(i, j) });
        assert!(pa_mpjpe(&y, &mirrored).unwrap().mean > 1.0);
    }

    #[test]
    fn degenerate_target_rejected() {
        let y = Matrix::filled(5, 3, 7.0);
        assert!(matches!(
            pa_mpjpe(&y, &Matrix::ones(5, 3)),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn pck_auc_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let y = random_pose(&mut rng, 17);
        let grid = default_auc_grid();
        let (pck, _) = pck_auc(&y, &y, 0, 150.0, &grid).unwrap();
        assert_eq!(pck, 1.0);
        assert!(pck_auc(&y, &y, 0, 150.0, &[]).is_err());
        assert_eq!(pck_from_errors(&[200.0; 17], 150.0), 0.0);
        assert_eq!(auc_from_errors(&[75.0; 17], &grid).unwrap(), 15.0 / 31.0);
    }
}
