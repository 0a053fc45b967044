mod common;

use common::{random_sample, random_scene, tiny_model};
use h2c_core::grid::Cell;
use h2c_core::learner::{StrategyKind, TrainConfig};
use h2c_core::losses::{total_loss, total_loss_and_grad, BaseKind, LossSpec, Target};
use h2c_core::memory::MemoryTriplet;
use h2c_core::predictor::ParamVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-3;

fn relative_error(analytic: f64, numeric: f64) -> Option<f64> {
    let scale = analytic.abs().max(numeric.abs());
    (scale > 1e-6).then(|| (analytic - numeric).abs() / scale)
}

/// Initializer draw with a fresh seed, rescaled by a random factor in
/// [0.5, 2).
fn random_params<R: Rng>(rng: &mut R, hidden: usize) -> ParamVector {
    let mut p = tiny_model(hidden, rng.random()).init_params();
    let k = rng.random_range(0.5..2.0);
    p.values.iter_mut().for_each(|v| *v *= k);
    p
}

#[test]
fn analytic_gradient_matches_central_differences() {
    let model = tiny_model(2, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let params = random_params(&mut rng, 2);
        let scenes: Vec<_> = (0..1 + case % 3).map(|_| random_scene(&mut rng, 2, 1)).collect();
        let stored: Vec<Vec<f64>> = scenes
            .iter()
            .map(|_| (0..9).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let kind = match case % 4 {
            0 | 1 => BaseKind::CrossEntropy,
            2 => BaseKind::Focal { gamma: 2.0 },
            _ => BaseKind::Focal { gamma: 0.5 },
        };
        let batch: Vec<_> = scenes
            .iter()
            .zip(&stored)
            .map(|(s, z)| {
                let cell = Cell::new(rng.random_range(0..3), rng.random_range(0..3));
                let target = match rng.random_range(0..3) {
                    0 => Target::Cell(cell),
                    1 => Target::Distill(z),
                    _ => Target::Replay { cell, init_logits: z },
                };
                (s, target)
            })
            .collect();
        let (_, g) = model.loss_and_grad(&params, &batch, kind).unwrap();
        for i in 0..params.len() {
            let mut up = params.clone();
            up.values[i] += EPS;
            let mut down = params.clone();
            down.values[i] -= EPS;
            let numeric = (model.loss(&up, &batch, kind).unwrap() - model.loss(&down, &batch, kind).unwrap()) / (2.0 * EPS);
            if let Some(e) = relative_error(g.values[i], numeric) {
                worst = worst.max(e);
            }
        }
    }
    println!("max relative error {worst:.3e}");
    assert!(worst < 1e-4, "max relative error {worst:e}");
}

#[test]
fn total_objective_gradient_matches_central_differences() {
    let model = tiny_model(3, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let params = random_params(&mut rng, 3);
        let current: Vec<_> = (0..3).map(|_| random_sample(&mut rng, 2, 1, 1)).collect();
        let memory: Vec<MemoryTriplet> = (0..4)
            .map(|_| {
                let s = random_sample(&mut rng, 2, 1, 1);
                MemoryTriplet::from_sample(&s, (0..9).map(|_| rng.random_range(-1.0..1.0)).collect())
            })
            .collect();
        let refs: Vec<_> = current.iter().collect();
        let sp: Vec<_> = memory[..2].iter().collect();
        let cp: Vec<_> = memory[2..].iter().collect();
        let spec = LossSpec {
            base: BaseKind::CrossEntropy,
            alpha: rng.random_range(0.0..2.0),
            beta: rng.random_range(0.0..2.0),
        };
        let (l, g) = total_loss_and_grad(&model, &params, &refs, &sp, &cp, &spec).unwrap();
        assert!((l - total_loss(&model, &params, &refs, &sp, &cp, &spec).unwrap()).abs() < 1e-12);
        for i in 0..params.len() {
            let mut up = params.clone();
            up.values[i] += EPS;
            let mut down = params.clone();
            down.values[i] -= EPS;
            let numeric = (total_loss(&model, &up, &refs, &sp, &cp, &spec).unwrap()
                - total_loss(&model, &down, &refs, &sp, &cp, &spec).unwrap())
                / (2.0 * EPS);
            if let Some(e) = relative_error(g.values[i], numeric) {
                worst = worst.max(e);
            }
        }
    }
    assert!(worst < 1e-4, "max relative error {worst:e}");
}

#[test]
fn parameter_count_is_invariant_under_training() {
    let model = tiny_model(4, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let stream: Vec<_> = (0..40).map(|i| random_sample(&mut rng, 2, 1, 1 + i / 20)).collect();
    let out = h2c_core::learner::train_stream(
        &model,
        &stream,
        StrategyKind::H2c,
        &TrainConfig {
            buffer_total: 6,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    assert_eq!(out.final_params.len(), model.num_params());
    assert!(out.final_params.values.iter().all(|v| v.is_finite()));
}
