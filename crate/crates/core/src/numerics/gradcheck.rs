//! Central finite-difference checks for analytic gradients.

use serde::Serialize;

use super::Matrix;
use crate::error::Result;

/// Relative error used throughout: `|analytic - numeric| / (|analytic| + 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + 1e-8)
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheck {
    pub entries_checked: usize,
    pub max_rel_err: f64,
    /// `(tensor index, flat entry index)` of the worst entry.
    pub worst: Option<(usize, usize)>,
}

impl GradCheck {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// Compares `analytic` gradients against central differences of `f` at
/// `inputs` with step `h`.
///
/// `f` is evaluated on perturbed copies of `inputs`; `analytic[k]` must have
/// the shape of `inputs[k]`.
pub fn check<F>(inputs: &[Matrix], analytic: &[Matrix], h: f64, mut f: F) -> Result<GradCheck>
where
    F: FnMut(&[Matrix]) -> Result<f64>,
{
    let mut work = inputs.to_vec();
    let mut report = GradCheck {
        entries_checked: 0,
        max_rel_err: 0.0,
        worst: None,
    };
    for (k, grad) in analytic.iter().enumerate() {
        for e in 0..grad.len() {
            let orig = work[k].data()[e];
            work[k].data_mut()[e] = orig + h;
            let plus = f(&work)?;
            work[k].data_mut()[e] = orig - h;
            let minus = f(&work)?;
            work[k].data_mut()[e] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(grad.data()[e], numeric);
            report.entries_checked += 1;
            if err > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(err);
                report.worst = Some((k, e));
            }
        }
    }
    Ok(report)
}
