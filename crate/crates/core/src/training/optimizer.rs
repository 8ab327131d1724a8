use crate::error::{Error, Result};
use crate::model::ModelParams;

/// AMSGrad moments for a named parameter set.
///
/// The first moment is bias-corrected; the running maximum of the second
/// moment is used uncorrected.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: ModelParams,
    pub v: ModelParams,
    pub v_hat: ModelParams,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerState {
    pub const BETAS: (f64, f64) = (0.9, 0.999);
    pub const EPS: f64 = 1e-8;

    /// Zero moments laid out like `params`.
    pub fn new(params: &ModelParams) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            v_hat: params.zeros_like(),
            step: 0,
            beta1: Self::BETAS.0,
            beta2: Self::BETAS.1,
            eps: Self::EPS,
        }
    }

    /// One AMSGrad update of `params` in place.
    ///
    /// `grads` must hold exactly the names of `params` with matching shapes.
    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams, lr: f64) -> Result<()> {
        for (name, p) in params.iter() {
            let g = grads
                .get(name)
                .ok_or_else(|| Error::Contract(format!("missing gradient for {name}")))?;
            if g.shape() != p.shape() {
                return Err(Error::shape("amsgrad_step", p.shape(), g.shape()));
            }
            if self.m.get(name).is_none() {
                return Err(Error::Contract(format!(
                    "optimizer has no state for {name}"
                )));
            }
        }
        if grads.len() != params.len() {
            let extra = grads
                .names()
                .find(|n| params.get(n).is_none())
                .unwrap_or_default();
            return Err(Error::Contract(format!(
                "gradient {extra} has no parameter"
            )));
        }

        self.step += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let correction = 1.0 - b1.powi(self.step.min(i32::MAX as u64) as i32);
        for (name, p) in params.iter_mut() {
            let g = grads.get(name).expect("checked above").data();
            let m = self.m.get_mut(name).expect("checked above").data_mut();
            let v = self
                .v
                .get_mut(name)
                .expect("state shares layout")
                .data_mut();
            let v_hat = self
                .v_hat
                .get_mut(name)
                .expect("state shares layout")
                .data_mut();
            for (i, theta) in p.data_mut().iter_mut().enumerate() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                v_hat[i] = v_hat[i].max(v[i]);
                *theta -= lr * (m[i] / correction) / (v_hat[i].sqrt() + eps);
            }
        }
        Ok(())
    }
}
