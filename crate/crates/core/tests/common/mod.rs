//! Straight-line reference implementations on nested `Vec`s. They share no
//! code with the library beyond reading its parameters.

#![allow(dead_code)]

use flexgcn::numerics::Matrix;

pub type Dense = Vec<Vec<f64>>;

pub fn dense(m: &Matrix) -> Dense {
    (0..m.rows())
        .map(|i| (0..m.cols()).map(|j| m.get(i, j)).collect())
        .collect()
}

pub fn zeros(r: usize, c: usize) -> Dense {
    vec![vec![0.0; c]; r]
}

pub fn mm(a: &Dense, b: &Dense) -> Dense {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = zeros(n, m);
    for i in 0..n {
        assert_eq!(a[i].len(), k);
        for j in 0..m {
            let mut acc = 0.0;
            for t in 0..k {
                acc += a[i][t] * b[t][j];
            }
            out[i][j] = acc;
        }
    }
    out
}

pub fn add(a: &Dense, b: &Dense) -> Dense {
    a.iter()
        .zip(b)
        .map(|(r, q)| r.iter().zip(q).map(|(x, y)| x + y).collect())
        .collect()
}

pub fn scale(a: &Dense, c: f64) -> Dense {
    a.iter()
        .map(|r| r.iter().map(|x| c * x).collect())
        .collect()
}

pub fn transpose(a: &Dense) -> Dense {
    (0..a[0].len())
        .map(|j| a.iter().map(|r| r[j]).collect())
        .collect()
}

pub fn max_diff(a: &Dense, m: &Matrix) -> f64 {
    let mut worst = 0.0f64;
    for (i, row) in a.iter().enumerate() {
        for (j, x) in row.iter().enumerate() {
            worst = worst.max((x - m.get(i, j)).abs());
        }
    }
    assert_eq!((a.len(), a[0].len()), m.shape());
    worst
}

pub fn gelu(x: f64) -> f64 {
    let inner = (2.0f64 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3));
    0.5 * x * (1.0 + inner.tanh())
}

pub fn map(a: &Dense, f: fn(f64) -> f64) -> Dense {
    a.iter()
        .map(|r| r.iter().map(|&x| f(x)).collect())
        .collect()
}

/// `D^{-1/2} A D^{-1/2}` from an edge list.
pub fn normalized_adjacency(n: usize, edges: &[(usize, usize)]) -> Dense {
    let mut deg = vec![0.0f64; n];
    for &(a, b) in edges {
        deg[a] += 1.0;
        deg[b] += 1.0;
    }
    let mut out = zeros(n, n);
    for &(a, b) in edges {
        let w = 1.0 / (deg[a] * deg[b]).sqrt();
        out[a][b] = w;
        out[b][a] = w;
    }
    out
}

/// `(1-s)·A + s·A·A`, materialized.
pub fn blended(a: &Dense, s: f64) -> Dense {
    add(&scale(a, 1.0 - s), &scale(&mm(a, a), s))
}

/// One flexible graph convolution, `act(P·H·W + X·W̃)`.
pub fn flex_gconv(
    p: &Dense,
    h: &Dense,
    w: &Dense,
    x0: &Dense,
    w_tilde: Option<&Dense>,
    gelu_act: bool,
) -> Dense {
    let mut z = mm(&mm(p, h), w);
    if let Some(wt) = w_tilde {
        z = add(&z, &mm(x0, wt));
    }
    if gelu_act {
        map(&z, gelu)
    } else {
        z
    }
}

pub fn layer_norm(h: &Dense, scale_row: &[f64], shift_row: &[f64], eps: f64) -> Dense {
    h.iter()
        .map(|r| {
            let f = r.len() as f64;
            let mu = r.iter().sum::<f64>() / f;
            let var = r.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / f;
            r.iter()
                .enumerate()
                .map(|(j, x)| (x - mu) / (var + eps).sqrt() * scale_row[j] + shift_row[j])
                .collect()
        })
        .collect()
}

pub fn grn(h: &Dense, gamma: &[f64], beta: &[f64], eps: f64) -> Dense {
    let f = h[0].len();
    let norms: Vec<f64> = (0..f)
        .map(|j| h.iter().map(|r| r[j] * r[j]).sum::<f64>().sqrt())
        .collect();
    let mean = norms.iter().sum::<f64>() / f as f64;
    h.iter()
        .map(|r| {
            (0..f)
                .map(|j| gamma[j] * r[j] * (norms[j] / (mean + eps)) + beta[j] + r[j])
                .collect()
        })
        .collect()
}

pub fn mse(y: &Dense, y_hat: &Dense) -> f64 {
    let n = y.len() as f64;
    let mut total = 0.0;
    for (a, b) in y.iter().zip(y_hat) {
        total += a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>();
    }
    total / n
}

pub fn mae(y: &Dense, y_hat: &Dense) -> f64 {
    let n = y.len() as f64;
    let mut total = 0.0;
    for (a, b) in y.iter().zip(y_hat) {
        total += a.iter().zip(b).map(|(p, q)| (p - q).abs()).sum::<f64>();
    }
    total / n
}

pub fn random_dense(r: usize, c: usize, rng: &mut impl rand::Rng) -> Dense {
    (0..r)
        .map(|_| (0..c).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect()
}

pub fn to_matrix(a: &Dense) -> Matrix {
    Matrix::from_rows(a).unwrap()
}
