use nalgebra::{Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Camera, Dataset, PoseSample};
use crate::error::{Error, Result};
use crate::graph::{SkeletonGraph, H36M_EDGES};
use crate::numerics::Matrix;

/// Symmetric joint-angle range in degrees about each local axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngleRange {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl AngleRange {
    pub const ZERO: AngleRange = AngleRange::new(0.0, 0.0, 0.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    fn scaled(self, k: f64) -> Self {
        Self::new(self.x * k, self.y * k, self.z * k)
    }
}

/// Pose families used as action labels; each scales the non-root joint
/// ranges by the paired factor.
pub const ACTION_FAMILIES: [(&str, f64); 3] =
    [("Relaxed", 0.3), ("Moderate", 0.65), ("Extreme", 1.0)];

/// Synthetic data generator settings.
///
/// `bone_lengths_mm` and `rest_directions` follow the skeleton's edge order;
/// a rest direction points from the parent joint to the child joint in the
/// body frame (y down, z away from the camera). `angle_ranges_deg` is indexed
/// by joint; the root's range is the global body orientation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub n_samples: usize,
    pub bone_lengths_mm: Vec<f64>,
    pub rest_directions: Vec<[f64; 3]>,
    pub angle_ranges_deg: Vec<AngleRange>,
    pub camera_distance_mm: [f64; 2],
    pub focal_px: f64,
    pub image_size_px: [f64; 2],
    #[serde(default)]
    pub noise_px: f64,
    #[serde(default)]
    pub seed: u64,
}

const H36M_BONES: [(f64, [f64; 3]); 16] = [
    (130.0, [-1.0, 0.0, 0.0]),
    (450.0, [0.0, 1.0, 0.0]),
    (450.0, [0.0, 1.0, 0.0]),
    (130.0, [1.0, 0.0, 0.0]),
    (450.0, [0.0, 1.0, 0.0]),
    (450.0, [0.0, 1.0, 0.0]),
    (230.0, [0.0, -1.0, 0.0]),
    (250.0, [0.0, -1.0, 0.0]),
    (110.0, [0.0, -1.0, 0.1]),
    (115.0, [0.0, -1.0, 0.0]),
    (150.0, [1.0, 0.0, 0.0]),
    (280.0, [0.0, 1.0, 0.0]),
    (250.0, [0.0, 1.0, 0.0]),
    (150.0, [-1.0, 0.0, 0.0]),
    (280.0, [0.0, 1.0, 0.0]),
    (250.0, [0.0, 1.0, 0.0]),
];

const H36M_RANGES: [AngleRange; 17] = [
    AngleRange::new(10.0, 180.0, 10.0), // Hip: global orientation
    AngleRange::new(60.0, 20.0, 30.0),  // RHip
    AngleRange::new(70.0, 0.0, 5.0),    // RKnee
    AngleRange::ZERO,                   // RFoot
    AngleRange::new(60.0, 20.0, 30.0),  // LHip
    AngleRange::new(70.0, 0.0, 5.0),    // LKnee
    AngleRange::ZERO,                   // LFoot
    AngleRange::new(25.0, 20.0, 15.0),  // Spine
    AngleRange::new(15.0, 20.0, 15.0),  // Thorax
    AngleRange::new(30.0, 40.0, 20.0),  // Neck
    AngleRange::ZERO,                   // Head
    AngleRange::new(80.0, 40.0, 80.0),  // LShoulder
    AngleRange::new(80.0, 0.0, 20.0),   // LElbow
    AngleRange::ZERO,                   // LWrist
    AngleRange::new(80.0, 40.0, 80.0),  // RShoulder
    AngleRange::new(80.0, 0.0, 20.0),   // RElbow
    AngleRange::ZERO,                   // RWrist
];

impl SynthConfig {
    fn with_bones(
        n_samples: usize,
        seed: u64,
        bones: Vec<(f64, [f64; 3])>,
        ranges: Vec<AngleRange>,
    ) -> Self {
        Self {
            n_samples,
            bone_lengths_mm: bones.iter().map(|b| b.0).collect(),
            rest_directions: bones.iter().map(|b| b.1).collect(),
            angle_ranges_deg: ranges,
            camera_distance_mm: [4000.0, 6000.0],
            focal_px: 1145.0,
            image_size_px: [1000.0, 1000.0],
            noise_px: 0.0,
            seed,
        }
    }

    /// Human3.6M-like proportions for [`SkeletonGraph::h36m`].
    pub fn h36m(n_samples: usize, seed: u64) -> Self {
        debug_assert_eq!(H36M_EDGES.len(), H36M_BONES.len());
        Self::with_bones(n_samples, seed, H36M_BONES.to_vec(), H36M_RANGES.to_vec())
    }

    /// Generic settings for any tree skeleton: 200 mm bones fanned out
    /// around the vertical axis and ±30° at every joint.
    pub fn for_skeleton(g: &SkeletonGraph, n_samples: usize, seed: u64) -> Self {
        if *g == SkeletonGraph::h36m() {
            return Self::h36m(n_samples, seed);
        }
        let e = g.edges().len().max(1) as f64;
        let bones = (0..g.edges().len())
            .map(|k| {
                let theta = std::f64::consts::TAU * k as f64 / e;
                (200.0, [theta.sin(), theta.cos(), 0.25])
            })
            .collect();
        let ranges = (0..g.n_joints())
            .map(|j| {
                if j == g.root() {
                    AngleRange::new(10.0, 180.0, 10.0)
                } else {
                    AngleRange::new(30.0, 30.0, 30.0)
                }
            })
            .collect();
        Self::with_bones(n_samples, seed, bones, ranges)
    }

    pub fn validate(&self, g: &SkeletonGraph) -> Result<()> {
        let e = g.edges().len();
        if self.bone_lengths_mm.len() != e || self.rest_directions.len() != e {
            return Err(Error::Config(format!(
                "{} bone lengths and {} rest directions for {e} edges",
                self.bone_lengths_mm.len(),
                self.rest_directions.len()
            )));
        }
        if self.angle_ranges_deg.len() != g.n_joints() {
            return Err(Error::Config(format!(
                "{} angle ranges for {} joints",
                self.angle_ranges_deg.len(),
                g.n_joints()
            )));
        }
        if self
            .bone_lengths_mm
            .iter()
            .any(|&l| !(l > 0.0 && l.is_finite()))
        {
            return Err(Error::Config("bone lengths must be positive".into()));
        }
        if self
            .rest_directions
            .iter()
            .any(|d| Vector3::from(*d).norm() == 0.0)
        {
            return Err(Error::Config("rest directions must be nonzero".into()));
        }
        for r in &self.angle_ranges_deg {
            if [r.x, r.y, r.z].iter().any(|a| !(0.0..=180.0).contains(a)) {
                return Err(Error::Config(format!(
                    "angle range {r:?} outside [0, 180] degrees"
                )));
            }
        }
        let [lo, hi] = self.camera_distance_mm;
        if !(lo > 0.0 && hi >= lo) {
            return Err(Error::Config(format!(
                "camera distance range [{lo}, {hi}] invalid"
            )));
        }
        if !(self.focal_px > 0.0 && self.image_size_px.iter().all(|&s| s > 0.0)) {
            return Err(Error::Config(
                "focal length and image size must be positive".into(),
            ));
        }
        if !(self.noise_px >= 0.0) {
            return Err(Error::Config("noise must be non-negative".into()));
        }
        Ok(())
    }

    pub fn camera(&self) -> Camera {
        Camera {
            f: self.focal_px,
            c: [self.image_size_px[0] / 2.0, self.image_size_px[1] / 2.0],
        }
    }
}

fn sample_rotation<R: Rng>(range: AngleRange, rng: &mut R) -> Rotation3<f64> {
    let mut draw = |deg: f64| rng.gen_range(-1.0..=1.0) * deg.to_radians();
    let (rx, ry, rz) = (draw(range.x), draw(range.y), draw(range.z));
    Rotation3::from_euler_angles(rx, ry, rz)
}

/// Root-relative joint positions for a skeleton tree with per-joint local
/// rotations; `rotations[root]` is the global orientation.
fn forward_kinematics(
    g: &SkeletonGraph,
    parents: &[Option<usize>],
    bone_of: &[usize],
    cfg: &SynthConfig,
    rotations: &[Rotation3<f64>],
) -> Vec<Vector3<f64>> {
    let n = g.n_joints();
    let mut pos = vec![Vector3::zeros(); n];
    let mut global = vec![Rotation3::identity(); n];
    for j in g.bfs_order() {
        match parents[j] {
            None => global[j] = rotations[j],
            Some(p) => {
                let e = bone_of[j];
                let dir = Vector3::from(cfg.rest_directions[e]).normalize();
                pos[j] = pos[p] + global[p] * (dir * cfg.bone_lengths_mm[e]);
                global[j] = global[p] * rotations[j];
            }
        }
    }
    pos
}

/// Samples articulated poses by forward kinematics and projects them with a
/// pinhole camera looking down `+z` at the root.
///
/// 3D joints are root-relative millimeters in the camera frame. 2D joints are
/// `(u - c) / (width / 2)` in pixels, with optional Gaussian pixel noise.
pub fn synthesize(cfg: &SynthConfig, g: &SkeletonGraph) -> Result<Dataset> {
    let parents = g.parents()?;
    cfg.validate(g)?;
    let mut bone_of = vec![usize::MAX; g.n_joints()];
    for (e, &(a, b)) in g.edges().iter().enumerate() {
        let child = if parents[b] == Some(a) { b } else { a };
        bone_of[child] = e;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.noise_px).map_err(|e| Error::Config(e.to_string()))?;
    let camera = cfg.camera();
    let half_width = cfg.image_size_px[0] / 2.0;
    let [d_lo, d_hi] = cfg.camera_distance_mm;

    let mut samples = Vec::with_capacity(cfg.n_samples);
    for _ in 0..cfg.n_samples {
        let (family, scale) = ACTION_FAMILIES[rng.gen_range(0..ACTION_FAMILIES.len())];
        let rotations: Vec<_> = (0..g.n_joints())
            .map(|j| {
                let range = if j == g.root() {
                    cfg.angle_ranges_deg[j]
                } else {
                    cfg.angle_ranges_deg[j].scaled(scale)
                };
                sample_rotation(range, &mut rng)
            })
            .collect();
        let pose = forward_kinematics(g, &parents, &bone_of, cfg, &rotations);
        let depth = if d_hi > d_lo {
            rng.gen_range(d_lo..d_hi)
        } else {
            d_lo
        };

        let mut j2d = Matrix::zeros(g.n_joints(), 2);
        let mut j3d = Matrix::zeros(g.n_joints(), 3);
        for (i, p) in pose.iter().enumerate() {
            let z = p.z + depth;
            if z <= 0.0 {
                return Err(Error::Domain(format!(
                    "joint {i} ends up behind the camera"
                )));
            }
            let mut u = camera.f * p.x / z + camera.c[0];
            let mut v = camera.f * p.y / z + camera.c[1];
            if cfg.noise_px > 0.0 {
                u += noise.sample(&mut rng);
                v += noise.sample(&mut rng);
            }
            j2d.set(i, 0, (u - camera.c[0]) / half_width);
            j2d.set(i, 1, (v - camera.c[1]) / half_width);
            for k in 0..3 {
                j3d.set(i, k, p[k]);
            }
        }
        samples.push(PoseSample::new(j2d, j3d, Some(family.to_string()), camera)?);
    }
    Ok(Dataset::new(samples))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_ranges_reproduce_rest_pose() {
        let g = SkeletonGraph::h36m();
        let mut cfg = SynthConfig::h36m(5, 1);
        cfg.angle_ranges_deg = vec![AngleRange::ZERO; 17];
        cfg.camera_distance_mm = [5000.0, 5000.0];
        let d = synthesize(&cfg, &g).unwrap();
        for s in &d.samples[1..] {
            assert_eq!(s.joints_3d, d.samples[0].joints_3d);
            assert_eq!(s.joints_2d, d.samples[0].joints_2d);
        }
        // right foot: hip offset plus two straight leg bones
        let foot = d.samples[0].joints_3d.row(3).to_vec();
        assert_eq!(foot, vec![-130.0, 900.0, 0.0]);
    }

    #[test]
    fn bone_lengths_are_preserved() {
        let g = SkeletonGraph::h36m();
        let cfg = SynthConfig::h36m(50, 7);
        let d = synthesize(&cfg, &g).unwrap();
        for s in &d.samples {
            for (e, &(a, b)) in g.edges().iter().enumerate() {
                let len = (0..3)
                    .map(|k| (s.joints_3d.get(a, k) - s.joints_3d.get(b, k)).powi(2))
                    .sum::<f64>()
                    .sqrt();
                assert!((len - cfg.bone_lengths_mm[e]).abs() < 1e-6);
            }
            assert_eq!(s.joints_3d.row(0), &[0.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn root_on_optical_axis_projects_to_origin() {
        let g = SkeletonGraph::h36m();
        let d = synthesize(&SynthConfig::h36m(10, 3), &g).unwrap();
        for s in &d.samples {
            assert_eq!(s.joints_2d.row(0), &[0.0, 0.0]);
        }
    }

    #[test]
    fn reproducible_from_seed() {
        let g = SkeletonGraph::h36m();
        let mut cfg = SynthConfig::h36m(20, 11);
        cfg.noise_px = 2.0;
        assert_eq!(synthesize(&cfg, &g).unwrap(), synthesize(&cfg, &g).unwrap());
        cfg.seed = 12;
        assert_ne!(
            synthesize(&cfg, &g).unwrap(),
            synthesize(&SynthConfig::h36m(20, 11), &g).unwrap()
        );
    }

    #[test]
    fn non_tree_rejected() {
        let g = SkeletonGraph::new(3, vec![(0, 1), (1, 2), (0, 2)], 0, vec![]).unwrap();
        let cfg = SynthConfig::for_skeleton(&g, 3, 0);
        assert!(matches!(synthesize(&cfg, &g), Err(Error::Domain(_))));
    }

    #[test]
    fn generic_skeleton_config_is_valid() {
        let g = SkeletonGraph::new(5, vec![(0, 1), (1, 2), (0, 3), (3, 4)], 0, vec![]).unwrap();
        let d = synthesize(&SynthConfig::for_skeleton(&g, 4, 0), &g).unwrap();
        assert_eq!(d.len(), 4);
        assert_eq!(d.samples[0].n_joints(), 5);
    }
}
