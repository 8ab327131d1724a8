use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Tape, Var};

/// `(Q + Qᵀ) / 2`.
pub fn symmetrize_modulation(q: &Matrix) -> Result<Matrix> {
    if !q.is_square() {
        return Err(Error::shape("symmetrize_modulation", q.shape(), q.shape()));
    }
    let n = q.rows();
    Ok(Matrix::from_fn(n, n, |i, j| {
        0.5 * (q.get(i, j) + q.get(j, i))
    }))
}

/// Recorded form of [`symmetrize_modulation`]; the gradient reaches both
/// `Q[i,j]` and `Q[j,i]`.
pub fn symmetrize_modulation_on(tape: &mut Tape, q: Var) -> Result<Var> {
    let (r, c) = tape.shape(q);
    if r != c {
        return Err(Error::shape("symmetrize_modulation", (r, c), (r, c)));
    }
    let qt = tape.transpose(q);
    let sum = tape.add(q, qt)?;
    Ok(tape.scale(sum, 0.5))
}

/// Small symmetric modulation matrix: uniform in `[-bound, bound]`, then
/// symmetrized.
pub fn init_modulation<R: Rng + ?Sized>(n: usize, bound: f64, rng: &mut R) -> Matrix {
    let q = Matrix::uniform(n, n, -bound, bound, rng);
    symmetrize_modulation(&q).expect("square")
}

/// Flexible propagation `((1-s)I + sǍ)Ǎ` with `Ǎ = Â + Q` when modulation is on
/// and `Ǎ = Â` otherwise.
///
/// The product with an embedding is evaluated right to left as
/// `(1-s)·(ǍH) + s·Ǎ(ǍH)`; the squared adjacency is never formed.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagationOperator {
    a_hat: Matrix,
    q: Matrix,
    s: f64,
    modulation: bool,
    symmetrize: bool,
}

impl PropagationOperator {
    /// Unmodulated operator. `s` may be 0 or 1 here; training configs
    /// restrict it to the open interval.
    pub fn new(a_hat: Matrix, s: f64) -> Result<Self> {
        if !a_hat.is_square() {
            return Err(Error::shape(
                "PropagationOperator",
                a_hat.shape(),
                a_hat.shape(),
            ));
        }
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::Domain(format!("scaling s = {s} outside [0, 1]")));
        }
        let n = a_hat.rows();
        Ok(Self {
            a_hat,
            q: Matrix::zeros(n, n),
            s,
            modulation: false,
            symmetrize: true,
        })
    }

    /// Enables adjacency modulation with the given `Q`.
    pub fn with_modulation(mut self, q: Matrix, symmetrize: bool) -> Result<Self> {
        if q.shape() != self.a_hat.shape() {
            return Err(Error::shape(
                "with_modulation",
                self.a_hat.shape(),
                q.shape(),
            ));
        }
        self.q = q;
        self.modulation = true;
        self.symmetrize = symmetrize;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.a_hat.rows()
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn a_hat(&self) -> &Matrix {
        &self.a_hat
    }

    pub fn q(&self) -> &Matrix {
        &self.q
    }

    pub fn set_q(&mut self, q: Matrix) -> Result<()> {
        if q.shape() != self.a_hat.shape() {
            return Err(Error::shape("set_q", self.a_hat.shape(), q.shape()));
        }
        self.q = q;
        Ok(())
    }

    pub fn modulation_enabled(&self) -> bool {
        self.modulation
    }

    pub fn symmetrize_enabled(&self) -> bool {
        self.symmetrize
    }

    /// The adjacency used in products: `Â + sym(Q)`, `Â + Q` or `Â`.
    pub fn effective_adjacency(&self) -> Matrix {
        if !self.modulation {
            return self.a_hat.clone();
        }
        let q = if self.symmetrize {
            symmetrize_modulation(&self.q).expect("square")
        } else {
            self.q.clone()
        };
        self.a_hat.add(&q).expect("same shape")
    }

    /// Dense `(1-s)Ǎ + sǍ²`. For analysis only; [`propagate`](Self::propagate)
    /// never builds it.
    pub fn materialize(&self) -> Matrix {
        let a = self.effective_adjacency();
        let a2 = a.matmul(&a).expect("square");
        a.axpby(1.0 - self.s, &a2, self.s).expect("same shape")
    }

    /// `((1-s)I + sǍ)Ǎ·h` as two adjacency products and one axpy.
    pub fn propagate(&self, h: &Matrix) -> Result<Matrix> {
        if h.rows() != self.n() {
            return Err(Error::shape("propagate", self.a_hat.shape(), h.shape()));
        }
        let adj = self.effective_adjacency();
        propagate_with(&adj, self.s, h)
    }

    /// Records `Ǎ` on `tape`. `q` is the tape variable holding `Q`; it is
    /// required exactly when modulation is enabled.
    pub fn bind(&self, tape: &mut Tape, q: Option<Var>) -> Result<BoundPropagation> {
        let a_hat = tape.constant(self.a_hat.clone());
        let adj = match (self.modulation, q) {
            (false, _) => a_hat,
            (true, Some(q)) => {
                let q = if self.symmetrize {
                    symmetrize_modulation_on(tape, q)?
                } else {
                    q
                };
                tape.add(a_hat, q)?
            }
            (true, None) => {
                return Err(Error::Contract(
                    "modulated propagation needs a Q variable".into(),
                ));
            }
        };
        Ok(BoundPropagation { adj, s: self.s })
    }
}

fn propagate_with(adj: &Matrix, s: f64, h: &Matrix) -> Result<Matrix> {
    let one_hop = adj.matmul(h)?;
    let two_hop = adj.matmul(&one_hop)?;
    one_hop.axpby(1.0 - s, &two_hop, s)
}

/// A [`PropagationOperator`] whose effective adjacency lives on a tape.
#[derive(Debug, Clone, Copy)]
pub struct BoundPropagation {
    pub adj: Var,
    pub s: f64,
}

impl BoundPropagation {
    pub fn propagate(&self, tape: &mut Tape, h: Var) -> Result<Var> {
        let (n, _) = tape.shape(self.adj);
        if tape.shape(h).0 != n {
            return Err(Error::shape("propagate", (n, n), tape.shape(h)));
        }
        let one_hop = tape.matmul(self.adj, h)?;
        let two_hop = tape.matmul(self.adj, one_hop)?;
        tape.axpby(one_hop, 1.0 - self.s, two_hop, self.s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{normalize_adjacency, SkeletonGraph};
    use crate::numerics::opcount;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn path3() -> Matrix {
        let g = SkeletonGraph::new(3, vec![(0, 1), (1, 2)], 0, vec![]).unwrap();
        normalize_adjacency(&g).unwrap()
    }

    #[test]
    fn symmetrize_examples() {
        let q = Matrix::from_rows(&[[0.0, 2.0], [0.0, 0.0]]).unwrap();
        assert_eq!(
            symmetrize_modulation(&q).unwrap(),
            Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap()
        );
        let sym = Matrix::from_rows(&[[1.0, 3.0], [3.0, -2.0]]).unwrap();
        assert_eq!(symmetrize_modulation(&sym).unwrap(), sym);
        assert!(symmetrize_modulation(&Matrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn symmetrized_output_is_exactly_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = Matrix::uniform(9, 9, -1.0, 1.0, &mut rng);
        let s = symmetrize_modulation(&q).unwrap();
        assert_eq!(s.max_abs_diff(&s.transpose()), 0.0);
    }

    #[test]
    fn limits_of_s() {
        let a = path3();
        let h = Matrix::from_rows(&[[1.0, 2.0], [-1.0, 0.5], [3.0, 0.0]]).unwrap();
        let ah = a.matmul(&h).unwrap();
        let p0 = PropagationOperator::new(a.clone(), 0.0).unwrap();
        assert!(p0.propagate(&h).unwrap().max_abs_diff(&ah) < 1e-15);
        let p1 = PropagationOperator::new(a.clone(), 1.0).unwrap();
        let aah = a.matmul(&ah).unwrap();
        assert!(p1.propagate(&h).unwrap().max_abs_diff(&aah) < 1e-15);
        assert!(PropagationOperator::new(a, 1.5).is_err());
    }

    #[test]
    fn matches_materialized_operator_on_path() {
        let a = path3();
        let op = PropagationOperator::new(a.clone(), 0.2).unwrap();
        let explicit = a.scale(0.8).add(&a.matmul(&a).unwrap().scale(0.2)).unwrap();
        let out = op.propagate(&Matrix::identity(3)).unwrap();
        assert!(out.max_abs_diff(&explicit) < 1e-10);
    }

    #[test]
    fn row_mismatch_is_shape_error() {
        let op = PropagationOperator::new(path3(), 0.2).unwrap();
        assert!(matches!(
            op.propagate(&Matrix::zeros(4, 2)),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn dense_modulated_operator_costs_two_n2f_plus_nf() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (n, f) = (7, 5);
        let q = Matrix::uniform(n, n, 0.1, 0.2, &mut rng);
        let op = PropagationOperator::new(Matrix::identity(n), 0.3)
            .unwrap()
            .with_modulation(q, true)
            .unwrap();
        let adj = op.effective_adjacency();
        assert_eq!(adj.count_nonzero(), n * n);
        let h = Matrix::uniform(n, f, 0.5, 1.0, &mut rng);
        opcount::reset();
        propagate_with(&adj, op.s(), &h).unwrap();
        assert_eq!(opcount::get(), (2 * n * n * f + n * f) as u64);
    }

    #[test]
    fn bind_requires_q_when_modulated() {
        let op = PropagationOperator::new(path3(), 0.2)
            .unwrap()
            .with_modulation(Matrix::zeros(3, 3), true)
            .unwrap();
        let mut tape = Tape::new();
        assert!(op.bind(&mut tape, None).is_err());
    }
}
