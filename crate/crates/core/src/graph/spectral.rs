use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Power-iteration settings for [`spectral_radius`].
#[derive(Debug, Clone, Copy)]
pub struct PowerIteration {
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for PowerIteration {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 10_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralEstimate {
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn apply(m: &Matrix, x: &[f64]) -> Vec<f64> {
    (0..m.rows())
        .map(|i| m.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

impl PowerIteration {
    /// Estimates the largest absolute eigenvalue of `m`.
    ///
    /// Symmetric input is iterated on `m²` (positive semidefinite), so the
    /// estimate `‖m x‖` increases monotonically towards `ρ(m)` and is immune
    /// to the `±λ` oscillation of bipartite graphs. Other input uses plain
    /// iteration with the estimate `‖m x‖`; a complex dominant pair shows up
    /// as a non-converged result.
    pub fn run(&self, m: &Matrix) -> Result<SpectralEstimate> {
        if !m.is_square() || m.is_empty() {
            return Err(Error::shape("spectral_radius", m.shape(), m.shape()));
        }
        if m.max_abs() == 0.0 {
            return Err(Error::Domain("spectral radius of the zero matrix".into()));
        }
        let symmetric = m.is_symmetric(1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut x: Vec<f64> = Matrix::uniform(m.rows(), 1, 0.5, 1.5, &mut rng).into_data();
        let n0 = norm(&x);
        x.iter_mut().for_each(|v| *v /= n0);

        let mut prev = f64::NAN;
        for it in 1..=self.max_iter {
            let y = apply(m, &x);
            let est = norm(&y);
            if est == 0.0 {
                return Ok(SpectralEstimate {
                    value: 0.0,
                    converged: true,
                    iterations: it,
                });
            }
            if (est - prev).abs() < self.tol {
                return Ok(SpectralEstimate {
                    value: est,
                    converged: true,
                    iterations: it,
                });
            }
            prev = est;
            let next = if symmetric { apply(m, &y) } else { y };
            let nn = norm(&next);
            if nn == 0.0 {
                return Ok(SpectralEstimate {
                    value: 0.0,
                    converged: true,
                    iterations: it,
                });
            }
            x = next.into_iter().map(|v| v / nn).collect();
        }
        Ok(SpectralEstimate {
            value: prev,
            converged: false,
            iterations: self.max_iter,
        })
    }
}

/// [`PowerIteration`] with the given tolerance and iteration cap and seed 0.
pub fn spectral_radius(m: &Matrix, tol: f64, max_iter: usize) -> Result<SpectralEstimate> {
    PowerIteration {
        tol,
        max_iter,
        ..Default::default()
    }
    .run(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_has_radius_one() {
        let est = spectral_radius(&Matrix::identity(6), 1e-10, 100).unwrap();
        assert!(est.converged);
        assert!((est.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bipartite_sign_flip_does_not_stall() {
        let m = Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap();
        let est = spectral_radius(&m, 1e-12, 100).unwrap();
        assert!(est.converged);
        assert!((est.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn non_symmetric_real_dominant() {
        let m = Matrix::from_rows(&[[2.0, 1.0], [0.0, 0.5]]).unwrap();
        let est = spectral_radius(&m, 1e-12, 10_000).unwrap();
        assert!(est.converged);
        assert!((est.value - 2.0).abs() < 1e-9);
    }

    #[test]
    fn rotation_does_not_converge() {
        // eigenvalues ±i: |λ| = 1 but no real dominant direction
        let m = Matrix::from_rows(&[[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.5]]).unwrap();
        let est = spectral_radius(&m, 1e-14, 50).unwrap();
        assert!((est.value - 1.0).abs() < 1e-9);
        let shear = Matrix::from_rows(&[[0.0, -2.0], [1.0, 0.0]]).unwrap();
        let est = spectral_radius(&shear, 1e-14, 50).unwrap();
        assert!(!est.converged);
    }

    #[test]
    fn zero_matrix_rejected() {
        assert!(spectral_radius(&Matrix::zeros(3, 3), 1e-10, 10).is_err());
        assert!(spectral_radius(&Matrix::zeros(2, 3), 1e-10, 10).is_err());
    }

    #[test]
    fn deterministic_given_seed() {
        let m = Matrix::from_rows(&[[1.0, 0.3, 0.0], [0.3, 0.2, 0.1], [0.0, 0.1, 0.7]]).unwrap();
        let p = PowerIteration {
            seed: 9,
            ..Default::default()
        };
        assert_eq!(p.run(&m).unwrap(), p.run(&m).unwrap());
    }
}
