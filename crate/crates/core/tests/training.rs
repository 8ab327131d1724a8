mod common;

use common::*;
use flexgcn::data::{synthesize, SynthConfig};
use flexgcn::graph::SkeletonGraph;
use flexgcn::model::ModelParams;
use flexgcn::numerics::Matrix;
use flexgcn::training::{
    batch_loss, loss, lr_at, train, train_observed, NullSink, OptimizerState, TrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn loss_endpoints_match_independent_mse_and_mae() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..50 {
        let n = rng.gen_range(1..20);
        let y = random_dense(n, 3, &mut rng);
        let y_hat = random_dense(n, 3, &mut rng);
        let (ym, hm) = (to_matrix(&y), to_matrix(&y_hat));
        let (mse, mae) = (mse(&y, &y_hat), mae(&y, &y_hat));
        assert!((loss(&ym, &hm, 0.0).unwrap() - mse).abs() < 1e-12);
        assert!((loss(&ym, &hm, 1.0).unwrap() - mae).abs() < 1e-12);
        assert!((loss(&ym, &hm, 0.03).unwrap() - (0.97 * mse + 0.03 * mae)).abs() < 1e-12);
    }
}

#[test]
fn batch_loss_is_sample_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let pairs: Vec<(Matrix, Matrix)> = (0..5)
        .map(|_| {
            (
                Matrix::uniform(4, 3, -1.0, 1.0, &mut rng),
                Matrix::uniform(4, 3, -1.0, 1.0, &mut rng),
            )
        })
        .collect();
    let expected = pairs
        .iter()
        .map(|(y, h)| loss(y, h, 0.3).unwrap())
        .sum::<f64>()
        / 5.0;
    let refs: Vec<(&Matrix, &Matrix)> = pairs.iter().map(|(a, b)| (a, b)).collect();
    assert!((batch_loss(&refs, 0.3).unwrap() - expected).abs() < 1e-15);
}

#[test]
fn amsgrad_matches_scalar_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let theta0 = 0.7;
    let mut params = ModelParams::from_entries(vec![("w".into(), Matrix::scalar(theta0))]).unwrap();
    let mut state = OptimizerState::new(&params);

    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let (mut theta, mut m, mut v, mut v_hat) = (theta0, 0.0f64, 0.0f64, 0.0f64);
    for t in 1..=200 {
        let g: f64 = if t % 17 == 0 {
            0.0
        } else {
            rng.gen_range(-2.0..2.0)
        };
        let lr = 0.01 * 0.5f64.powi(t / 50);
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        v_hat = v_hat.max(v);
        theta -= lr * (m / (1.0 - b1.powi(t))) / (v_hat.sqrt() + eps);

        let grads = ModelParams::from_entries(vec![("w".into(), Matrix::scalar(g))]).unwrap();
        state.step(&mut params, &grads, lr).unwrap();
        let got = params.get("w").unwrap().get(0, 0);
        assert!((got - theta).abs() < 1e-12, "step {t}: {got} vs {theta}");
        assert!((state.v_hat.get("w").unwrap().get(0, 0) - v_hat).abs() < 1e-12);
    }
    assert_eq!(state.step, 200);
}

#[test]
fn first_step_magnitude() {
    // bias correction on m only: |Δθ| = lr · 1 / sqrt(1 - β₂)
    let mut params = ModelParams::from_entries(vec![("w".into(), Matrix::scalar(0.0))]).unwrap();
    let mut state = OptimizerState::new(&params);
    let grads = ModelParams::from_entries(vec![("w".into(), Matrix::scalar(3.0))]).unwrap();
    state.step(&mut params, &grads, 1e-3).unwrap();
    let expected = -1e-3 * 3.0 / ((1e-3f64 * 9.0).sqrt() + 1e-8);
    assert!((params.get("w").unwrap().get(0, 0) - expected).abs() < 1e-15);
}

#[test]
fn lr_schedule_values() {
    let cfg = TrainConfig::default();
    for (epoch, k) in [(0usize, 0i32), (3, 0), (4, 1), (8, 2)] {
        assert_eq!(lr_at(epoch, &cfg), 0.001 * 0.99f64.powi(k));
    }
    assert_eq!(lr_at(0, &cfg), 0.001);
    assert_eq!(lr_at(4, &cfg), 0.001 * 0.99);
}

fn tiny_run_config() -> TrainConfig {
    TrainConfig {
        epochs: 4,
        batch_size: 8,
        hidden: 8,
        blocks: 1,
        seed: 5,
        ..TrainConfig::default()
    }
}

#[test]
fn v_hat_never_decreases_during_training() {
    let g = SkeletonGraph::h36m();
    let data = synthesize(&SynthConfig::h36m(40, 3), &g).unwrap();
    let cfg = tiny_run_config();
    let mut prev: Option<ModelParams> = None;
    let mut steps = 0;
    let out = train_observed(
        cfg.build_model(&g).unwrap(),
        &data,
        &cfg,
        &mut NullSink,
        |info| {
            let v_hat = &info.optimizer.v_hat;
            if let Some(p) = &prev {
                for (name, m) in v_hat.iter() {
                    let before = p.get(name).unwrap();
                    assert!(
                        m.data().iter().zip(before.data()).all(|(a, b)| a >= b),
                        "{name}"
                    );
                }
            }
            prev = Some(v_hat.clone());
            steps += 1;
        },
    )
    .unwrap();
    assert_eq!(steps, out.steps);
    assert_eq!(out.history.len(), 4);
}

#[test]
fn training_is_bit_reproducible() {
    let g = SkeletonGraph::h36m();
    let data = synthesize(&SynthConfig::h36m(30, 9), &g).unwrap();
    let cfg = tiny_run_config();
    let a = train(cfg.build_model(&g).unwrap(), &data, &cfg, &mut NullSink).unwrap();
    let b = train(cfg.build_model(&g).unwrap(), &data, &cfg, &mut NullSink).unwrap();
    assert_eq!(a.model.params(), b.model.params());
    assert_eq!(a.history, b.history);

    let other = TrainConfig {
        seed: 6,
        ..cfg.clone()
    };
    let c = train(other.build_model(&g).unwrap(), &data, &other, &mut NullSink).unwrap();
    assert_ne!(a.model.params(), c.model.params());
}

#[test]
fn training_reduces_loss() {
    let g = SkeletonGraph::h36m();
    let data = synthesize(&SynthConfig::h36m(32, 1), &g).unwrap();
    let cfg = TrainConfig {
        epochs: 25,
        dropout: 0.0,
        ..tiny_run_config()
    };
    let out = train(cfg.build_model(&g).unwrap(), &data, &cfg, &mut NullSink).unwrap();
    let first = out.history.first().unwrap().train_loss;
    let last = out.history.last().unwrap().train_loss;
    assert!(last < 0.5 * first, "{first} -> {last}");
    assert!(
        out.best_val_mpjpe
            <= out
                .history
                .iter()
                .map(|r| r.val_mpjpe)
                .fold(f64::INFINITY, f64::min)
    );
}
