//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every operation of a forward pass as a node holding its
//! value. [`Tape::backward`] replays the records in reverse and returns the
//! gradient of a scalar node with respect to every parameter leaf.
//!
//! ```
//! use flexgcn::numerics::{Matrix, Tape};
//!
//! let mut tape = Tape::new();
//! let w = tape.param(Matrix::ones(2, 2));
//! let loss = tape.sum(w);
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(w).unwrap(), &Matrix::ones(2, 2));
//! ```

use std::f64::consts::PI;

use super::Matrix;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Param,
    Constant,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Axpby {
        x: Var,
        a: f64,
        y: Var,
        b: f64,
    },
    Gelu(Var),
    Abs(Var),
    Square(Var),
    Transpose(Var),
    Sum(Var),
    Mean(Var),
    ColumnL2Norms(Var),
    RowMean(Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    /// `num / (den + eps)` with `den` a 1×1 node.
    DivScalar {
        num: Var,
        den: Var,
        eps: f64,
    },
    /// Per-row standardization; keeps `1/sqrt(var + eps)` per row.
    NormalizeRows {
        x: Var,
        inv_std: Vec<f64>,
    },
}

struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

/// Operation record for one forward pass.
///
/// A tape is single-use: after [`backward`](Tape::backward) it must be
/// [`clear`](Tape::clear)ed before recording again.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<Var>,
    consumed: bool,
}

/// Gradients of a scalar with respect to every parameter leaf of a tape.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<(Var, Matrix)>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Matrix> {
        self.grads.iter().find(|(v, _)| *v == var).map(|(_, g)| g)
    }

    /// Removes and returns the gradient for `var`.
    pub fn take(&mut self, var: Var) -> Option<Matrix> {
        let pos = self.grads.iter().position(|(v, _)| *v == var)?;
        Some(self.grads.swap_remove(pos).1)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Var, &Matrix)> {
        self.grads.iter().map(|(v, g)| (*v, g))
    }
}

const GELU_C: f64 = 0.044715;

fn gelu_k() -> f64 {
    (2.0 / PI).sqrt()
}

/// Tanh-approximated GELU.
pub fn gelu(x: f64) -> f64 {
    let t = (gelu_k() * (x + GELU_C * x * x * x)).tanh();
    0.5 * x * (1.0 + t)
}

/// Derivative of [`gelu`].
pub fn gelu_grad(x: f64) -> f64 {
    let k = gelu_k();
    let t = (k * (x + GELU_C * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * k * (1.0 + 3.0 * GELU_C * x * x)
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops all records so the tape can be reused.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.params.clear();
        self.consumed = false;
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push_unary(&mut self, value: Matrix, op: Op, input: Var) -> Var {
        let needs = self.needs(input);
        self.push(value, op, needs)
    }

    fn push_binary(&mut self, value: Matrix, op: Op, a: Var, b: Var) -> Var {
        let needs = self.needs(a) || self.needs(b);
        self.push(value, op, needs)
    }

    /// Differentiable leaf; [`backward`](Tape::backward) reports its gradient.
    pub fn param(&mut self, value: Matrix) -> Var {
        let v = self.push(value, Op::Param, true);
        self.params.push(v);
        v
    }

    /// Leaf that is not differentiated.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Constant, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push_binary(value, Op::MatMul(a, b), a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push_binary(value, Op::Add(a, b), a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        Ok(self.push_binary(value, Op::Sub(a, b), a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).mul(self.value(b))?;
        Ok(self.push_binary(value, Op::Mul(a, b), a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).scale(c);
        self.push_unary(value, Op::Scale(a, c), a)
    }

    /// `a * x + b * y`.
    pub fn axpby(&mut self, x: Var, a: f64, y: Var, b: f64) -> Result<Var> {
        let value = self.value(x).axpby(a, self.value(y), b)?;
        Ok(self.push_binary(value, Op::Axpby { x, a, y, b }, x, y))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(gelu);
        self.push_unary(value, Op::Gelu(a), a)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::abs);
        self.push_unary(value, Op::Abs(a), a)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v * v);
        self.push_unary(value, Op::Square(a), a)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.push_unary(value, Op::Transpose(a), a)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::scalar(self.value(a).sum());
        self.push_unary(value, Op::Sum(a), a)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let value = Matrix::scalar(self.value(a).mean()?);
        Ok(self.push_unary(value, Op::Mean(a), a))
    }

    pub fn column_l2_norms(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).column_l2_norms()?;
        Ok(self.push_unary(value, Op::ColumnL2Norms(a), a))
    }

    pub fn row_mean(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).row_mean()?;
        Ok(self.push_unary(value, Op::RowMean(a), a))
    }

    /// Adds a 1×cols row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, r) = (self.value(a), self.value(row));
        if r.rows() != 1 || r.cols() != m.cols() {
            return Err(Error::shape("add_row", m.shape(), r.shape()));
        }
        let value = Matrix::from_fn(m.rows(), m.cols(), |i, j| m.get(i, j) + r.get(0, j));
        Ok(self.push_binary(value, Op::AddRow(a, row), a, row))
    }

    /// Scales column `j` of `a` by `row[j]`.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, r) = (self.value(a), self.value(row));
        if r.rows() != 1 || r.cols() != m.cols() {
            return Err(Error::shape("mul_row", m.shape(), r.shape()));
        }
        let value = Matrix::from_fn(m.rows(), m.cols(), |i, j| m.get(i, j) * r.get(0, j));
        Ok(self.push_binary(value, Op::MulRow(a, row), a, row))
    }

    /// `num / (den + eps)` for a 1×1 `den`.
    pub fn div_scalar(&mut self, num: Var, den: Var, eps: f64) -> Result<Var> {
        let d = self
            .value(den)
            .as_scalar()
            .ok_or_else(|| Error::shape("div_scalar", self.shape(num), self.shape(den)))?;
        let value = self.value(num).scale(1.0 / (d + eps));
        Ok(self.push_binary(value, Op::DivScalar { num, den, eps }, num, den))
    }

    /// Standardizes each row to zero mean and unit variance (`eps` added to
    /// the variance).
    pub fn normalize_rows(&mut self, x: Var, eps: f64) -> Result<Var> {
        let m = self.value(x);
        if m.cols() == 0 {
            return Err(Error::Domain(
                "normalize_rows needs at least one column".into(),
            ));
        }
        let c = m.cols() as f64;
        let mut out = Matrix::zeros(m.rows(), m.cols());
        let mut inv_std = Vec::with_capacity(m.rows());
        for i in 0..m.rows() {
            let row = m.row(i);
            let mu = row.iter().sum::<f64>() / c;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / c;
            let r = 1.0 / (var + eps).sqrt();
            for (j, v) in row.iter().enumerate() {
                out.set(i, j, (v - mu) * r);
            }
            inv_std.push(r);
        }
        Ok(self.push_unary(out, Op::NormalizeRows { x, inv_std }, x))
    }

    /// Gradients of the 1×1 node `loss` with respect to every parameter.
    ///
    /// Parameters that do not influence `loss` get zero gradients. The tape
    /// is consumed; a second call without [`clear`](Tape::clear) and
    /// re-recording fails.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::Contract(
                "tape already consumed by backward; clear and re-record".into(),
            ));
        }
        if loss.0 >= self.nodes.len() {
            return Err(Error::Contract("loss node is not on this tape".into()));
        }
        if self.value(loss).as_scalar().is_none() {
            return Err(Error::Contract(format!(
                "backward root must be 1x1, got {:?}",
                self.shape(loss)
            )));
        }
        self.consumed = true;

        let mut adj: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        adj[loss.0] = Some(Matrix::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            if !self.nodes[idx].needs_grad {
                continue;
            }
            if matches!(self.nodes[idx].op, Op::Param) {
                adj[idx] = Some(g);
                continue;
            }
            for (input, contrib) in self.adjoints(idx, &g)? {
                if !self.needs(input) {
                    continue;
                }
                match &mut adj[input.0] {
                    Some(acc) => acc.add_assign(&contrib)?,
                    slot @ None => *slot = Some(contrib),
                }
            }
        }

        let grads = self
            .params
            .iter()
            .map(|&p| {
                let g = adj[p.0].take().unwrap_or_else(|| {
                    let (r, c) = self.shape(p);
                    Matrix::zeros(r, c)
                });
                (p, g)
            })
            .collect();
        Ok(Gradients { grads })
    }

    /// Adjoint contributions of node `idx` to its inputs given upstream `g`.
    fn adjoints(&self, idx: usize, g: &Matrix) -> Result<Vec<(Var, Matrix)>> {
        let node = &self.nodes[idx];
        let out = &node.value;
        let val = |v: Var| self.value(v);
        Ok(match &node.op {
            Op::Param | Op::Constant => Vec::new(),
            Op::MatMul(a, b) => {
                let mut v = Vec::with_capacity(2);
                if self.needs(*a) {
                    v.push((*a, g.matmul(&val(*b).transpose())?));
                }
                if self.needs(*b) {
                    v.push((*b, val(*a).transpose().matmul(g)?));
                }
                v
            }
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.scale(-1.0))],
            Op::Mul(a, b) => vec![(*a, g.mul(val(*b))?), (*b, g.mul(val(*a))?)],
            Op::Scale(a, c) => vec![(*a, g.scale(*c))],
            Op::Axpby { x, a, y, b } => vec![(*x, g.scale(*a)), (*y, g.scale(*b))],
            Op::Gelu(a) => vec![(*a, g.mul(&val(*a).map(gelu_grad))?)],
            Op::Abs(a) => vec![(*a, g.mul(&val(*a).map(sign))?)],
            Op::Square(a) => vec![(*a, g.mul(&val(*a).scale(2.0))?)],
            Op::Transpose(a) => vec![(*a, g.transpose())],
            Op::Sum(a) => {
                let (r, c) = self.shape(*a);
                vec![(*a, Matrix::filled(r, c, g.get(0, 0)))]
            }
            Op::Mean(a) => {
                let (r, c) = self.shape(*a);
                vec![(*a, Matrix::filled(r, c, g.get(0, 0) / (r * c) as f64))]
            }
            Op::ColumnL2Norms(a) => {
                let x = val(*a);
                let d = Matrix::from_fn(x.rows(), x.cols(), |i, j| {
                    let n = out.get(0, j);
                    if n == 0.0 {
                        0.0
                    } else {
                        g.get(0, j) * x.get(i, j) / n
                    }
                });
                vec![(*a, d)]
            }
            Op::RowMean(a) => {
                let (r, c) = self.shape(*a);
                vec![(*a, Matrix::from_fn(r, c, |i, _| g.get(i, 0) / c as f64))]
            }
            Op::AddRow(a, row) => {
                let col_sums =
                    Matrix::from_fn(1, g.cols(), |_, j| (0..g.rows()).map(|i| g.get(i, j)).sum());
                vec![(*a, g.clone()), (*row, col_sums)]
            }
            Op::MulRow(a, row) => {
                let (m, r) = (val(*a), val(*row));
                let da = Matrix::from_fn(g.rows(), g.cols(), |i, j| g.get(i, j) * r.get(0, j));
                let dr = Matrix::from_fn(1, g.cols(), |_, j| {
                    (0..g.rows()).map(|i| g.get(i, j) * m.get(i, j)).sum()
                });
                vec![(*a, da), (*row, dr)]
            }
            Op::DivScalar { num, den, eps } => {
                let d = val(*den).get(0, 0) + eps;
                let dnum = g.scale(1.0 / d);
                let dden = -g.mul(val(*num))?.sum() / (d * d);
                vec![(*num, dnum), (*den, Matrix::scalar(dden))]
            }
            Op::NormalizeRows { x, inv_std } => {
                let c = out.cols() as f64;
                let mut dx = Matrix::zeros(out.rows(), out.cols());
                for (i, r) in inv_std.iter().enumerate() {
                    let (gi, yi) = (g.row(i), out.row(i));
                    let g_mean = gi.iter().sum::<f64>() / c;
                    let gy_mean = gi.iter().zip(yi).map(|(a, b)| a * b).sum::<f64>() / c;
                    for j in 0..out.cols() {
                        dx.set(i, j, r * (gi[j] - g_mean - yi[j] * gy_mean));
                    }
                }
                vec![(*x, dx)]
            }
        })
    }
}
