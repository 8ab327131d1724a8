use std::io::Write;

use serde::Serialize;

use super::propagation::symmetrize_modulation;
use super::spectral::PowerIteration;
use super::{normalize_adjacency, SkeletonGraph};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// One row of the stability table for a given `s`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityRow {
    pub s: f64,
    /// `ρ((1-s)Â + sÂ²)`
    pub rho_p: f64,
    /// `ρ((1-s)Â) + ρ(sÂ²)`
    pub bound: f64,
    pub holds: bool,
    /// `ρ((1-s)Ǎ + sǏ²)` with `Ǎ = Â + sym(Q)`, when a `Q` was given.
    pub rho_modulated: Option<f64>,
}

/// Slack allowed between the estimated `ρ(P)` and the estimated bound.
pub const BOUND_SLACK: f64 = 1e-9;

fn blend(a: &Matrix, s: f64) -> Result<Matrix> {
    let a2 = a.matmul(a)?;
    a.axpby(1.0 - s, &a2, s)
}

/// Spectral radii of the flexible propagation matrix against the
/// commuting-sum bound, for each `s`.
///
/// The modulated radius is reported only; it may exceed 1.
pub fn stability_report(
    g: &SkeletonGraph,
    s_values: &[f64],
    q: Option<&Matrix>,
) -> Result<Vec<StabilityRow>> {
    let a_hat = normalize_adjacency(g)?;
    stability_report_for(&a_hat, s_values, q)
}

/// [`stability_report`] for an already normalized adjacency.
pub fn stability_report_for(
    a_hat: &Matrix,
    s_values: &[f64],
    q: Option<&Matrix>,
) -> Result<Vec<StabilityRow>> {
    let power = PowerIteration {
        tol: 1e-13,
        ..Default::default()
    };
    let a2 = a_hat.matmul(a_hat)?;
    let rho_a = power.run(a_hat)?.value;
    let rho_a2 = power.run(&a2)?.value;
    let modulated = match q {
        Some(q) => Some(a_hat.add(&symmetrize_modulation(q)?)?),
        None => None,
    };

    s_values
        .iter()
        .map(|&s| {
            if !(s > 0.0 && s < 1.0) {
                return Err(Error::Domain(format!("s = {s} outside (0, 1)")));
            }
            let rho_p = power.run(&blend(a_hat, s)?)?.value;
            let bound = (1.0 - s) * rho_a + s * rho_a2;
            let rho_modulated = match &modulated {
                Some(m) => Some(power.run(&blend(m, s)?)?.value),
                None => None,
            };
            Ok(StabilityRow {
                s,
                rho_p,
                bound,
                holds: rho_p <= bound + BOUND_SLACK,
                rho_modulated,
            })
        })
        .collect()
}

/// Writes `s,rho_P,bound,holds,rho_modulated`; the last column is empty
/// when no modulation was analysed.
pub fn write_stability_csv<W: Write>(rows: &[StabilityRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["s", "rho_P", "bound", "holds", "rho_modulated"])?;
    for r in rows {
        out.write_record([
            r.s.to_string(),
            r.rho_p.to_string(),
            r.bound.to_string(),
            r.holds.to_string(),
            r.rho_modulated.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    out.flush().map_err(|e| Error::io("<stability csv>", e))?;
    Ok(())
}
