//! Finite-difference gradient suite covering every tape operation, every
//! layer, the loss and a small end-to-end model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::graph::{
    init_modulation, normalize_adjacency, symmetrize_modulation_on, PropagationOperator,
    SkeletonGraph,
};
use crate::layers::{
    dropout_mask, flex_gconv_on, grn_on, layer_norm_on, Activation, FlexGConvVars, GrnVars,
    LayerNormVars, Mode,
};
use crate::model::{FlexGcnModel, ModelConfig};
use crate::numerics::gradcheck::{check, GradCheck};
use crate::numerics::{Matrix, Tape, Var};
use crate::training::loss_on;

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
pub const GRADCHECK_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckRow {
    pub name: String,
    pub entries_checked: usize,
    pub max_rel_err: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub seed: u64,
    pub tolerance: f64,
    pub rows: Vec<GradCheckRow>,
    pub max_rel_err: f64,
    pub passed: bool,
}

type Builder = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

/// Checks `build` at `inputs`. A non-scalar output is contracted against a
/// fixed random weighting so that every output entry contributes.
pub fn check_graph<F>(inputs: &[Matrix], weights_seed: u64, build: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let run = |tape: &mut Tape, values: &[Matrix], as_params: bool| -> Result<(Var, Vec<Var>)> {
        let vars: Vec<Var> = values
            .iter()
            .map(|m| {
                if as_params {
                    tape.param(m.clone())
                } else {
                    tape.constant(m.clone())
                }
            })
            .collect();
        let out = build(tape, &vars)?;
        let (r, c) = tape.shape(out);
        if (r, c) == (1, 1) {
            return Ok((out, vars));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(weights_seed);
        let w = tape.constant(Matrix::uniform(r, c, -1.0, 1.0, &mut rng));
        let weighted = tape.mul(out, w)?;
        Ok((tape.sum(weighted), vars))
    };

    let mut tape = Tape::new();
    let (loss, vars) = run(&mut tape, inputs, true)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Matrix> = vars
        .iter()
        .map(|&v| grads.get(v).expect("param").clone())
        .collect();
    check(inputs, &analytic, GRADCHECK_STEP, |values| {
        let mut tape = Tape::new();
        let (loss, _) = run(&mut tape, values, false)?;
        Ok(tape.value(loss).get(0, 0))
    })
}

fn rand_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Matrix {
    Matrix::uniform(rows, cols, -1.0, 1.0, rng)
}

/// Entries bounded away from zero, for kinked or singular ops.
fn rand_away_from_zero<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| {
        let m = rng.gen_range(0.2..1.0);
        if rng.gen::<bool>() {
            m
        } else {
            -m
        }
    })
}

fn tiny_graph<R: Rng>(rng: &mut R) -> Result<SkeletonGraph> {
    SkeletonGraph::random_connected(5, 0.3, rng)
}

/// Runs every check for `seed`. Graph-level checks use a random connected
/// graph with 5 nodes and width-6 features.
pub fn gradient_suite(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, f) = (5usize, 6usize);
    let mut cases: Vec<(String, Vec<Matrix>, Builder)> = Vec::new();
    let mut add =
        |name: &str, inputs: Vec<Matrix>, b: Builder| cases.push((name.to_string(), inputs, b));

    let a = rand_matrix(&mut rng, 3, 4);
    let b = rand_matrix(&mut rng, 4, 2);
    let c = rand_matrix(&mut rng, 3, 4);
    let row_vec = rand_away_from_zero(&mut rng, 1, 4);
    let nz = rand_away_from_zero(&mut rng, 3, 4);
    add(
        "op.matmul",
        vec![a.clone(), b],
        Box::new(|t, v| t.matmul(v[0], v[1])),
    );
    add(
        "op.add",
        vec![a.clone(), c.clone()],
        Box::new(|t, v| t.add(v[0], v[1])),
    );
    add(
        "op.sub",
        vec![a.clone(), c.clone()],
        Box::new(|t, v| t.sub(v[0], v[1])),
    );
    add(
        "op.mul",
        vec![a.clone(), c.clone()],
        Box::new(|t, v| t.mul(v[0], v[1])),
    );
    add(
        "op.scale",
        vec![a.clone()],
        Box::new(|t, v| Ok(t.scale(v[0], -1.7))),
    );
    add(
        "op.axpby",
        vec![a.clone(), c.clone()],
        Box::new(|t, v| t.axpby(v[0], 0.3, v[1], -2.0)),
    );
    add(
        "op.gelu",
        vec![a.scale(3.0)],
        Box::new(|t, v| Ok(t.gelu(v[0]))),
    );
    add("op.abs", vec![nz.clone()], Box::new(|t, v| Ok(t.abs(v[0]))));
    add(
        "op.square",
        vec![a.clone()],
        Box::new(|t, v| Ok(t.square(v[0]))),
    );
    add(
        "op.transpose",
        vec![a.clone()],
        Box::new(|t, v| Ok(t.transpose(v[0]))),
    );
    add("op.sum", vec![a.clone()], Box::new(|t, v| Ok(t.sum(v[0]))));
    add("op.mean", vec![a.clone()], Box::new(|t, v| t.mean(v[0])));
    add(
        "op.column_l2_norms",
        vec![nz.clone()],
        Box::new(|t, v| t.column_l2_norms(v[0])),
    );
    add(
        "op.row_mean",
        vec![a.clone()],
        Box::new(|t, v| t.row_mean(v[0])),
    );
    add(
        "op.add_row",
        vec![a.clone(), row_vec.clone()],
        Box::new(|t, v| t.add_row(v[0], v[1])),
    );
    add(
        "op.mul_row",
        vec![a.clone(), row_vec.clone()],
        Box::new(|t, v| t.mul_row(v[0], v[1])),
    );
    let den = Matrix::scalar(rng.gen_range(0.5..2.0));
    add(
        "op.div_scalar",
        vec![a.clone(), den],
        Box::new(|t, v| t.div_scalar(v[0], v[1], 1e-6)),
    );
    add(
        "op.normalize_rows",
        vec![a.clone()],
        Box::new(|t, v| t.normalize_rows(v[0], 1e-5)),
    );

    let g = tiny_graph(&mut rng)?;
    let a_hat = normalize_adjacency(&g)?;
    let s = rng.gen_range(0.1..0.9);
    let h = rand_matrix(&mut rng, n, f);
    let x0 = rand_matrix(&mut rng, n, 2);
    let w = Matrix::glorot_uniform(f, f, &mut rng);
    let w_tilde = Matrix::glorot_uniform(2, f, &mut rng);
    let q = init_modulation(n, 0.1, &mut rng);

    let plain = PropagationOperator::new(a_hat.clone(), s)?;
    let prop_plain = plain.clone();
    add(
        "layer.propagate",
        vec![h.clone()],
        Box::new(move |t, v| prop_plain.bind(t, None)?.propagate(t, v[0])),
    );
    for symmetrize in [true, false] {
        let op = plain.clone().with_modulation(q.clone(), symmetrize)?;
        let name = if symmetrize {
            "layer.propagate_modulated_sym"
        } else {
            "layer.propagate_modulated"
        };
        add(
            name,
            vec![h.clone(), q.clone()],
            Box::new(move |t, v| op.bind(t, Some(v[1]))?.propagate(t, v[0])),
        );
    }
    add(
        "layer.symmetrize_q",
        vec![q.clone()],
        Box::new(|t, v| symmetrize_modulation_on(t, v[0])),
    );

    let modulated = plain.clone().with_modulation(q.clone(), true)?;
    let op_irc = modulated.clone();
    add(
        "layer.flex_gconv_irc",
        vec![h.clone(), x0.clone(), w.clone(), w_tilde.clone(), q.clone()],
        Box::new(move |t, v| {
            let prop = op_irc.bind(t, Some(v[4]))?;
            let vars = FlexGConvVars {
                w: v[2],
                w_tilde: Some(v[3]),
            };
            flex_gconv_on(t, &prop, &vars, v[0], v[1], Activation::Gelu)
        }),
    );
    let op_no_irc = plain.clone();
    add(
        "layer.flex_gconv_no_irc",
        vec![h.clone(), x0.clone(), w.clone()],
        Box::new(move |t, v| {
            let prop = op_no_irc.bind(t, None)?;
            let vars = FlexGConvVars {
                w: v[2],
                w_tilde: None,
            };
            flex_gconv_on(t, &prop, &vars, v[0], v[1], Activation::None)
        }),
    );

    let ln_scale = rand_away_from_zero(&mut rng, 1, f);
    let ln_shift = rand_matrix(&mut rng, 1, f);
    add(
        "layer.layer_norm",
        vec![h.clone(), ln_scale, ln_shift],
        Box::new(|t, v| {
            layer_norm_on(
                t,
                &LayerNormVars {
                    scale: v[1],
                    shift: v[2],
                },
                v[0],
                1e-5,
            )
        }),
    );
    let gamma = rand_matrix(&mut rng, 1, f);
    let beta = rand_matrix(&mut rng, 1, f);
    add(
        "layer.grn",
        vec![rand_away_from_zero(&mut rng, n, f), gamma, beta],
        Box::new(|t, v| {
            grn_on(
                t,
                &GrnVars {
                    gamma: v[1],
                    beta: v[2],
                },
                v[0],
                1e-6,
            )
        }),
    );
    let mask =
        dropout_mask(n, f, 0.3, Mode::Train, &mut rng)?.expect("train mode with positive rate");
    add(
        "layer.dropout",
        vec![h.clone()],
        Box::new(move |t, v| {
            let m = t.constant(mask.clone());
            t.mul(v[0], m)
        }),
    );

    let y = rand_matrix(&mut rng, n, 3);
    let y_hat = rand_away_from_zero(&mut rng, n, 3).add(&y)?;
    for alpha in [0.0, 0.03, 1.0] {
        let target = y.clone();
        add(
            &format!("loss.alpha_{alpha}"),
            vec![y_hat.clone()],
            Box::new(move |t, v| loss_on(t, v[0], &target, alpha)),
        );
    }

    let mut rows: Vec<GradCheckRow> = Vec::new();
    for (k, (name, inputs, build)) in cases.iter().enumerate() {
        let r = check_graph(inputs, seed.wrapping_add(k as u64), build)?;
        rows.push(row(name, &r));
    }
    rows.push(model_row("model.full", seed, &g, ModelConfig::default())?);
    rows.push(model_row(
        "model.no_irc_no_modulation",
        seed,
        &g,
        ModelConfig {
            irc: false,
            modulation: false,
            ..ModelConfig::default()
        },
    )?);
    rows.push(model_row(
        "model.per_layer_modulation",
        seed,
        &g,
        ModelConfig {
            per_layer_modulation: true,
            symmetry: false,
            ..ModelConfig::default()
        },
    )?);

    let max_rel_err = rows.iter().map(|r| r.max_rel_err).fold(0.0, f64::max);
    Ok(GradCheckReport {
        seed,
        tolerance: GRADCHECK_TOLERANCE,
        passed: rows.iter().all(|r| r.passed),
        rows,
        max_rel_err,
    })
}

fn row(name: &str, r: &GradCheck) -> GradCheckRow {
    GradCheckRow {
        name: name.to_string(),
        entries_checked: r.entries_checked,
        max_rel_err: r.max_rel_err,
        passed: r.passed(GRADCHECK_TOLERANCE),
    }
}

/// End-to-end check on a width-6, two-block model with dropout active. Every
/// evaluation replays the same dropout masks; GRN gamma and beta are
/// randomized so that the layer is not at its identity point.
pub fn check_model(model: &FlexGcnModel, seed: u64) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
    let n = model.n_joints();
    let x = rand_matrix(&mut rng, n, 2);
    let y = rand_matrix(&mut rng, n, 3);
    let alpha = 0.03;
    let dropout_seed = rng.gen::<u64>();
    let params = model.params();
    let names: Vec<String> = params.names().map(str::to_string).collect();
    let inputs: Vec<Matrix> = params.iter().map(|(_, m)| m.clone()).collect();

    let (_, grads) = model.backward_step(
        &x,
        &y,
        alpha,
        Mode::Train,
        &mut ChaCha8Rng::seed_from_u64(dropout_seed),
    )?;
    let analytic: Vec<Matrix> = names
        .iter()
        .map(|n| grads.get(n).expect("same layout").clone())
        .collect();

    let mut probe = model.clone();
    let mut work = params.clone();
    check(&inputs, &analytic, GRADCHECK_STEP, |values| {
        for ((_, slot), v) in work.iter_mut().zip(values) {
            slot.clone_from(v);
        }
        probe.set_params(&work)?;
        let (loss, _) = probe.backward_step(
            &x,
            &y,
            alpha,
            Mode::Train,
            &mut ChaCha8Rng::seed_from_u64(dropout_seed),
        )?;
        Ok(loss)
    })
}

fn model_row(name: &str, seed: u64, g: &SkeletonGraph, base: ModelConfig) -> Result<GradCheckRow> {
    let config = ModelConfig {
        hidden: 6,
        blocks: 2,
        dropout: 0.25,
        ..base
    };
    let mut model = FlexGcnModel::new(config, g.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37);
    let mut params = model.params();
    for (name, m) in params.iter_mut() {
        if name.starts_with("grn.") {
            *m = Matrix::uniform(m.rows(), m.cols(), -0.5, 0.5, &mut rng);
        }
    }
    model.set_params(&params)?;
    Ok(row(name, &check_model(&model, seed)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes() {
        let report = gradient_suite(7).unwrap();
        for r in &report.rows {
            assert!(r.passed, "{} max rel err {:e}", r.name, r.max_rel_err);
        }
        assert!(report.passed);
    }
}
