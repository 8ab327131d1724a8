//! Differentiable building blocks: flexible graph convolution, layer
//! normalization, global response normalization and dropout.
//!
//! Each layer owns its parameters as plain matrices. `bind` registers them on
//! a [`Tape`] and the `*_on` functions record the forward computation so
//! gradients can be taken. The `forward` methods are tape-free conveniences.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{BoundPropagation, PropagationOperator};
use crate::numerics::{Matrix, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Gelu,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

fn apply_activation(tape: &mut Tape, z: Var, act: Activation) -> Var {
    match act {
        Activation::Gelu => tape.gelu(z),
        Activation::None => z,
    }
}

/// Binds a propagation operator with its own `Q` recorded as a constant.
fn bind_constant(tape: &mut Tape, op: &PropagationOperator) -> Result<BoundPropagation> {
    let q = op
        .modulation_enabled()
        .then(|| tape.constant(op.q().clone()));
    op.bind(tape, q)
}

/// Flexible graph convolution `σ(P·H·W + X·W̃)`.
///
/// `w_tilde` is `None` when the initial residual connection is disabled.
#[derive(Debug, Clone, PartialEq)]
pub struct FlexGConvLayer {
    pub w: Matrix,
    pub w_tilde: Option<Matrix>,
}

#[derive(Debug, Clone, Copy)]
pub struct FlexGConvVars {
    pub w: Var,
    pub w_tilde: Option<Var>,
}

impl FlexGConvLayer {
    /// Glorot-uniform weights. `residual_width` is the width of the residual
    /// input `X`, or `None` to disable the residual term.
    pub fn new<R: Rng + ?Sized>(
        f_in: usize,
        f_out: usize,
        residual_width: Option<usize>,
        rng: &mut R,
    ) -> Self {
        let w = Matrix::glorot_uniform(f_in, f_out, rng);
        let w_tilde = residual_width.map(|fx| Matrix::glorot_uniform(fx, f_out, rng));
        Self { w, w_tilde }
    }

    pub fn irc_enabled(&self) -> bool {
        self.w_tilde.is_some()
    }

    pub fn bind(&self, tape: &mut Tape) -> FlexGConvVars {
        FlexGConvVars {
            w: tape.param(self.w.clone()),
            w_tilde: self.w_tilde.as_ref().map(|m| tape.param(m.clone())),
        }
    }

    pub fn forward(
        &self,
        op: &PropagationOperator,
        h: &Matrix,
        x0: &Matrix,
        act: Activation,
    ) -> Result<Matrix> {
        let mut tape = Tape::new();
        let prop = bind_constant(&mut tape, op)?;
        let vars = FlexGConvVars {
            w: tape.constant(self.w.clone()),
            w_tilde: self.w_tilde.as_ref().map(|m| tape.constant(m.clone())),
        };
        let h = tape.constant(h.clone());
        let x0 = tape.constant(x0.clone());
        let out = flex_gconv_on(&mut tape, &prop, &vars, h, x0, act)?;
        Ok(tape.value(out).clone())
    }
}

/// Records `σ(P·(H·W) + X·W̃)`.
///
/// The propagation is applied to the transformed embedding `H·W`, so its
/// cost scales with the output width.
pub fn flex_gconv_on(
    tape: &mut Tape,
    prop: &BoundPropagation,
    vars: &FlexGConvVars,
    h: Var,
    x0: Var,
    act: Activation,
) -> Result<Var> {
    let hw = tape.matmul(h, vars.w)?;
    let mut z = prop.propagate(tape, hw)?;
    if let Some(w_tilde) = vars.w_tilde {
        if tape.shape(x0).0 != tape.shape(h).0 {
            return Err(Error::shape(
                "flex_gconv residual",
                tape.shape(h),
                tape.shape(x0),
            ));
        }
        let residual = tape.matmul(x0, w_tilde)?;
        z = tape.add(z, residual)?;
    }
    Ok(apply_activation(tape, z, act))
}

/// Per-node normalization over channels followed by a per-channel affine map.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormLayer {
    pub scale: Matrix,
    pub shift: Matrix,
    pub eps: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNormVars {
    pub scale: Var,
    pub shift: Var,
}

impl LayerNormLayer {
    pub const DEFAULT_EPS: f64 = 1e-5;

    pub fn new(width: usize) -> Self {
        Self {
            scale: Matrix::ones(1, width),
            shift: Matrix::zeros(1, width),
            eps: Self::DEFAULT_EPS,
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> LayerNormVars {
        LayerNormVars {
            scale: tape.param(self.scale.clone()),
            shift: tape.param(self.shift.clone()),
        }
    }

    pub fn forward(&self, h: &Matrix) -> Result<Matrix> {
        let mut tape = Tape::new();
        let vars = LayerNormVars {
            scale: tape.constant(self.scale.clone()),
            shift: tape.constant(self.shift.clone()),
        };
        let h = tape.constant(h.clone());
        let out = layer_norm_on(&mut tape, &vars, h, self.eps)?;
        Ok(tape.value(out).clone())
    }
}

pub fn layer_norm_on(tape: &mut Tape, vars: &LayerNormVars, h: Var, eps: f64) -> Result<Var> {
    let normed = tape.normalize_rows(h, eps)?;
    let scaled = tape.mul_row(normed, vars.scale)?;
    tape.add_row(scaled, vars.shift)
}

/// Global response normalization over graph nodes.
///
/// For channel `j`: `g_j = ‖h[:, j]‖₂`, `n_j = g_j / (mean(g) + eps)` and
/// `out[:, j] = gamma_j · h[:, j] · n_j + beta_j + h[:, j]`. With
/// `gamma = beta = 0` the layer is the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct GrnLayer {
    pub gamma: Matrix,
    pub beta: Matrix,
    pub eps: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct GrnVars {
    pub gamma: Var,
    pub beta: Var,
}

impl GrnLayer {
    pub const DEFAULT_EPS: f64 = 1e-6;

    pub fn new(width: usize) -> Self {
        Self {
            gamma: Matrix::zeros(1, width),
            beta: Matrix::zeros(1, width),
            eps: Self::DEFAULT_EPS,
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> GrnVars {
        GrnVars {
            gamma: tape.param(self.gamma.clone()),
            beta: tape.param(self.beta.clone()),
        }
    }

    pub fn forward(&self, h: &Matrix) -> Result<Matrix> {
        let mut tape = Tape::new();
        let vars = GrnVars {
            gamma: tape.constant(self.gamma.clone()),
            beta: tape.constant(self.beta.clone()),
        };
        let h = tape.constant(h.clone());
        let out = grn_on(&mut tape, &vars, h, self.eps)?;
        Ok(tape.value(out).clone())
    }
}

pub fn grn_on(tape: &mut Tape, vars: &GrnVars, h: Var, eps: f64) -> Result<Var> {
    let norms = tape.column_l2_norms(h)?;
    let mean_norm = tape.mean(norms)?;
    let response = tape.div_scalar(norms, mean_norm, eps)?;
    let gain = tape.mul(vars.gamma, response)?;
    let calibrated = tape.mul_row(h, gain)?;
    let shifted = tape.add_row(calibrated, vars.beta)?;
    tape.add(shifted, h)
}

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Domain(format!("dropout rate {rate} outside [0, 1)")));
    }
    Ok(())
}

/// Inverted-dropout mask: entries are `0` with probability `rate` and
/// `1 / (1 - rate)` otherwise. `None` when dropout is a no-op.
pub fn dropout_mask<R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<Option<Matrix>> {
    check_rate(rate)?;
    if mode == Mode::Eval || rate == 0.0 {
        return Ok(None);
    }
    let keep = 1.0 / (1.0 - rate);
    Ok(Some(Matrix::from_fn(rows, cols, |_, _| {
        if rng.gen::<f64>() < rate {
            0.0
        } else {
            keep
        }
    })))
}

pub fn dropout<R: Rng + ?Sized>(h: &Matrix, rate: f64, mode: Mode, rng: &mut R) -> Result<Matrix> {
    match dropout_mask(h.rows(), h.cols(), rate, mode, rng)? {
        Some(mask) => h.mul(&mask),
        None => Ok(h.clone()),
    }
}

pub fn dropout_on<R: Rng + ?Sized>(
    tape: &mut Tape,
    h: Var,
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<Var> {
    let (r, c) = tape.shape(h);
    match dropout_mask(r, c, rate, mode, rng)? {
        Some(mask) => {
            let mask = tape.constant(mask);
            tape.mul(h, mask)
        }
        None => Ok(h),
    }
}
