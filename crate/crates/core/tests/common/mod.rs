#![allow(dead_code)]

use h2c_core::domain::{AgentState, GroundTruth, Sample, Scene};
use h2c_core::grid::GridSpec;
use h2c_core::predictor::{Predictor, PredictorConfig};
use rand::Rng;

/// Smooth constant-velocity tracks with small jitter; neighbors start
/// within 10 m of the target.
pub fn random_scene<R: Rng>(rng: &mut R, t_obs: usize, k_sv: usize) -> Scene {
    let track = |rng: &mut R, origin: [f64; 2]| -> Vec<AgentState> {
        let v = [rng.random_range(-8.0..8.0), rng.random_range(-8.0..8.0)];
        (0..t_obs)
            .map(|k| {
                let t = k as f64 * 0.1;
                AgentState::new(
                    origin[0] + v[0] * t + rng.random_range(-0.2..0.2),
                    origin[1] + v[1] * t + rng.random_range(-0.2..0.2),
                    v[0],
                    v[1],
                )
                .unwrap()
            })
            .collect()
    };
    let o = [rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0)];
    let tv = track(rng, o);
    let svs = (0..k_sv)
        .map(|_| {
            let d = [rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)];
            track(rng, [o[0] + d[0], o[1] + d[1]])
        })
        .collect();
    let mask = (0..k_sv).map(|_| rng.random_bool(0.6)).collect();
    Scene::new(tv, svs, mask, 0).unwrap()
}

pub fn random_sample<R: Rng>(rng: &mut R, t_obs: usize, k_sv: usize, label: u32) -> Sample {
    let scene = random_scene(rng, t_obs, k_sv);
    let truth = GroundTruth::new(
        [rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0)],
        rng.random_range(0.0..12.0),
    )
    .unwrap();
    Sample::new(scene, truth, label).unwrap()
}

/// Two observed steps, one neighbor, 3x3 grid.
pub fn tiny_model(hidden: usize, seed: u64) -> Predictor {
    Predictor::new(PredictorConfig {
        t_obs: 2,
        k_sv: 1,
        hidden_dims: vec![hidden],
        grid: GridSpec::new(3, 3, [-1.0, -1.5], 1.0).unwrap(),
        seed,
    })
    .unwrap()
}
