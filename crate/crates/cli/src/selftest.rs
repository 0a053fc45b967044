//! Fast invariant suite behind `h2c selftest`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use h2c_core::domain::{AgentState, GroundTruth, Scene};
use h2c_core::experiment::{run_cell, CellConfig, ExperimentData};
use h2c_core::grid::{Cell, GridSpec, Heatmap};
use h2c_core::learner::{StrategyKind, TrainConfig};
use h2c_core::losses::{BaseKind, Target};
use h2c_core::matrix::ResultMatrix;
use h2c_core::memory::{CompletionBuffer, SeparationBuffer};
use h2c_core::metrics::{bwt, extract_endpoints, fde_sample, mr_task, mr_threshold, MissCase, PredictionSet};
use h2c_core::predictor::{adam_step, AdamState, GradVector, ParamVector, Predictor, PredictorConfig};
use h2c_core::scenarios::StreamSpec;
use h2c_core::SceneGeometry;

use crate::oracles;

/// SHA-256 of the tiny experiment's matrix files.
pub const GOLDEN_MATRIX_SHA256: &str = "fe7890f7f886bdd82ad3f80c31017bd49b84b1ef242bb435ccddb738fbb10484";

pub struct Check {
    pub name: &'static str,
    pub outcome: Result<String, String>,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.outcome.is_ok()
    }

    pub fn line(&self) -> String {
        match &self.outcome {
            Ok(detail) => format!("PASS  {:<22} {detail}", self.name),
            Err(why) => format!("FAIL  {:<22} {why}", self.name),
        }
    }
}

fn check(name: &'static str, f: impl FnOnce() -> Result<String, String>) -> Check {
    Check { name, outcome: f() }
}

pub fn run_all() -> Vec<Check> {
    vec![
        check("gradient", || gradient_check(100, 1)),
        check("reservoir_uniformity", || reservoir_uniformity(10_000, 1)),
        check("replacement_frequency", || replacement_frequency(100_000, 0)),
        check("metric_oracles", || metric_oracles(1000, 0)),
        check("adam_descent", || adam_descent(adam_step)),
        check("golden_matrix", || {
            let hash = tiny_experiment_hash().map_err(|e| e.to_string())?;
            if hash == GOLDEN_MATRIX_SHA256 {
                Ok(hash)
            } else {
                Err(format!("hash {hash} differs from pinned {GOLDEN_MATRIX_SHA256}"))
            }
        }),
    ]
}

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
                .expect("finite")
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
    Scene::new(tv, svs, mask, 0).expect("valid scene")
}

/// Largest `|analytic - numeric| / max(|analytic|, |numeric|)` over all
/// components with a non-negligible gradient, for `cases` random tiny nets.
pub fn gradient_max_relative_error(cases: usize, seed: u64) -> h2c_core::Result<f64> {
    let grid = GridSpec::new(3, 3, [-1.0, -1.5], 1.0)?;
    let model = Predictor::new(PredictorConfig {
        t_obs: 2,
        k_sv: 1,
        hidden_dims: vec![2],
        grid,
        seed,
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps = 1e-3;
    let mut worst: f64 = 0.0;
    for case in 0..cases {
        // initializer draw with a fresh seed, rescaled
        let mut params = Predictor::new(PredictorConfig {
            seed: rng.random(),
            ..model.config().clone()
        })?
        .init_params();
        let k = rng.random_range(0.5..2.0);
        params.values.iter_mut().for_each(|v| *v *= k);
        let scene = random_scene(&mut rng, 2, 1);
        let cell = Cell::new(rng.random_range(0..3), rng.random_range(0..3));
        let stored: Vec<f64> = (0..9).map(|_| rng.random_range(-1.0..1.0)).collect();
        let kind = if case % 2 == 0 {
            BaseKind::CrossEntropy
        } else {
            BaseKind::Focal { gamma: 2.0 }
        };
        let target = match case % 3 {
            0 => Target::Cell(cell),
            1 => Target::Distill(&stored),
            _ => Target::Replay {
                cell,
                init_logits: &stored,
            },
        };
        let loss = |p: &ParamVector| model.loss(p, &[(&scene, target)], kind);
        let (_, g) = model.loss_and_grad(&params, &[(&scene, target)], kind)?;
        for i in 0..params.len() {
            let mut up = params.clone();
            up.values[i] += eps;
            let mut down = params.clone();
            down.values[i] -= eps;
            let numeric = (loss(&up)? - loss(&down)?) / (2.0 * eps);
            let scale = g.values[i].abs().max(numeric.abs());
            if scale > 1e-6 {
                worst = worst.max((g.values[i] - numeric).abs() / scale);
            }
        }
    }
    Ok(worst)
}

pub fn gradient_check(cases: usize, seed: u64) -> Result<String, String> {
    let worst = gradient_max_relative_error(cases, seed).map_err(|e| e.to_string())?;
    if worst < 1e-4 {
        Ok(format!("max relative error {worst:.2e} over {cases} cases"))
    } else {
        Err(format!("max relative error {worst:.2e} >= 1e-4"))
    }
}

/// Per-item inclusion counts for a capacity-`k` reservoir over `n` items.
pub fn reservoir_counts(k: usize, n: usize, runs: usize, seed: u64) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![0u64; n];
    for _ in 0..runs {
        let mut buf = CompletionBuffer::<usize>::new(k).expect("k > 0");
        for item in 0..n {
            buf.observe(item, &mut rng);
        }
        for &item in buf.items() {
            counts[item] += 1;
        }
    }
    counts
}

/// Chi-square statistic and its p-value with `n - 1` degrees of freedom.
pub fn chi_square_uniform(counts: &[u64], expected: f64) -> (f64, f64) {
    let stat: f64 = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    let dist = ChiSquared::new((counts.len() - 1) as f64).expect("dof > 0");
    (stat, 1.0 - dist.cdf(stat))
}

pub fn reservoir_uniformity(runs: usize, seed: u64) -> Result<String, String> {
    let (k, n) = (10, 100);
    let counts = reservoir_counts(k, n, runs, seed);
    let p = k as f64 / n as f64;
    let sigma = (p * (1.0 - p) / runs as f64).sqrt();
    let worst = counts
        .iter()
        .map(|&c| (c as f64 / runs as f64 - p).abs())
        .fold(0.0, f64::max);
    let (stat, pval) = chi_square_uniform(&counts, runs as f64 * p);
    if worst > 3.0 * sigma {
        return Err(format!("max deviation {worst:.4} beyond 3 sigma {:.4}", 3.0 * sigma));
    }
    if pval < 0.001 {
        return Err(format!("chi-square {stat:.1} rejected, p = {pval:.2e}"));
    }
    Ok(format!("max dev {worst:.4} <= {:.4}, chi2 {stat:.1}, p {pval:.3}", 3.0 * sigma))
}

/// Fraction of trials in which a newcomer with score `q_new` replaces the
/// only stored item, scored `q_old`.
pub fn replacement_rate(q_old: f64, q_new: f64, trials: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut replaced = 0usize;
    for _ in 0..trials {
        let mut buf = SeparationBuffer::<u8>::new(1, 1).expect("capacity 1");
        buf.observe(0, q_old, &mut rng);
        buf.observe(1, q_new, &mut rng);
        replaced += (buf.entries()[0].item == 1) as usize;
    }
    replaced as f64 / trials as f64
}

pub fn replacement_frequency(trials: usize, seed: u64) -> Result<String, String> {
    let equal = replacement_rate(0.5, 0.5, trials, seed);
    let always = replacement_rate(2.0, 0.0, trials, seed + 1);
    if (equal - 0.5).abs() > 0.005 {
        return Err(format!("equal scores replaced at {equal:.4}"));
    }
    if always != 1.0 {
        return Err(format!("q_new = 0 replaced at {always}"));
    }
    Ok(format!("equal scores {equal:.4}, q_new = 0 -> {always}"))
}

fn random_heatmap<R: Rng>(rng: &mut R) -> Heatmap {
    let spec = GridSpec::new(
        rng.random_range(2..9),
        rng.random_range(2..9),
        [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)],
        rng.random_range(0.5..3.0),
    )
    .expect("valid grid");
    // coarse values produce plateaus and ties
    let logits = (0..spec.len())
        .map(|_| rng.random_range(0..12) as f64 * 0.5)
        .collect();
    Heatmap::new(logits, spec).expect("finite logits")
}

/// Compares the library metrics with the brute-force oracles on `cases`
/// random inputs each.
pub fn metric_oracles(cases: usize, seed: u64) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let err = |e: h2c_core::Error| e.to_string();
    for i in 0..cases {
        let hm = random_heatmap(&mut rng);
        let w = rng.random_range(1..10);
        let got = extract_endpoints(&hm, w).map_err(err)?.endpoints;
        let want = oracles::endpoints(&hm.spec, &hm.logits, w);
        if got != want {
            return Err(format!("endpoints case {i}: {got:?} != {want:?}"));
        }
    }
    for i in 0..cases {
        let n = rng.random_range(1..8);
        let endpoints: Vec<[f64; 2]> = (0..n)
            .map(|_| [rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0)])
            .collect();
        let truth = GroundTruth::new([rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0)], 1.0)
            .expect("finite");
        let got = fde_sample(&PredictionSet { endpoints: endpoints.clone() }, &truth).map_err(err)?;
        let want = oracles::fde(&endpoints, truth.endpoint);
        if got != want {
            return Err(format!("fde case {i}: {got} != {want}"));
        }
    }
    for i in 0..cases {
        let mut mine = Vec::new();
        let mut theirs = Vec::new();
        for _ in 0..rng.random_range(1..5) {
            let truth = [rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)];
            let v = rng.random_range(0.0..15.0);
            let angle: f64 = rng.random_range(-3.2..3.2);
            let heading = [angle.cos(), angle.sin()];
            let endpoints: Vec<[f64; 2]> = (0..6)
                .map(|_| {
                    [
                        truth[0] + rng.random_range(-3.0..3.0),
                        truth[1] + rng.random_range(-3.0..3.0),
                    ]
                })
                .collect();
            mine.push(MissCase {
                pred: PredictionSet {
                    endpoints: endpoints.clone(),
                },
                truth: GroundTruth::new(truth, v).expect("finite"),
                heading,
            });
            theirs.push((endpoints, truth, v, heading));
        }
        let got = mr_task(&mine).map_err(err)?;
        let want = oracles::miss_rate(&theirs);
        if got != want {
            return Err(format!("mr case {i}: {got} != {want}"));
        }
    }
    for i in 0..cases {
        let n = rng.random_range(2..7);
        let dense: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..n).map(|_| rng.random_range(0.0..10.0)).collect())
            .collect();
        let mut m = ResultMatrix::new(n);
        for a in 1..=n {
            for t in 1..=a {
                m.set(a, t, dense[a - 1][t - 1]).map_err(err)?;
            }
        }
        let c = rng.random_range(2..=n);
        let got = bwt(&m, c).map_err(err)?;
        let want = oracles::bwt(&dense, c);
        if (got - want).abs() > 1e-12 {
            return Err(format!("bwt case {i}: {got} != {want}"));
        }
    }
    for (v, want) in [(0.5, 1.0), (6.2, 1.5), (20.0, 2.0)] {
        let got = mr_threshold(v).map_err(err)?;
        if (got - want).abs() > 1e-12 {
            return Err(format!("threshold({v}) = {got}, expected {want}"));
        }
    }
    Ok(format!("{cases} cases each for endpoints, fde, mr, bwt"))
}

type StepFn = fn(&mut ParamVector, &GradVector, &mut AdamState, f64) -> h2c_core::Result<()>;

/// Minimizes a shifted quadratic with the given optimizer step and
/// requires the loss to fall below 1% of its start.
pub fn adam_descent(step: StepFn) -> Result<String, String> {
    let target = [1.5, -2.0, 0.25, 3.0];
    let loss = |p: &ParamVector| -> f64 { p.values.iter().zip(target).map(|(x, t)| (x - t).powi(2)).sum() };
    let mut p = ParamVector::zeros(target.len());
    let mut state = AdamState::new(target.len());
    let start = loss(&p);
    for _ in 0..500 {
        let g = GradVector {
            values: p.values.iter().zip(target).map(|(x, t)| 2.0 * (x - t)).collect(),
        };
        step(&mut p, &g, &mut state, 0.05).map_err(|e| e.to_string())?;
    }
    let end = loss(&p);
    if end < 0.01 * start {
        Ok(format!("loss {start:.3} -> {end:.2e}"))
    } else {
        Err(format!("loss {start:.3} -> {end:.3} did not descend"))
    }
}

/// Runs a fixed tiny experiment and hashes its matrix CSVs.
pub fn tiny_experiment_hash() -> h2c_core::Result<String> {
    let geometry = SceneGeometry::default();
    let data = ExperimentData::generate(&StreamSpec::three_task(30, 7), &geometry)?;
    let cfg = CellConfig {
        predictor: PredictorConfig {
            hidden_dims: vec![8],
            grid: GridSpec::new(8, 8, [-2.0, -16.0], 4.0)?,
            ..PredictorConfig::default()
        },
        train: TrainConfig {
            buffer_total: 12,
            ..TrainConfig::default()
        },
        endpoints: 6,
    };
    let mut hasher = Sha256::new();
    for strategy in [StrategyKind::Vanilla, StrategyKind::H2c] {
        let run = run_cell(&data, &cfg, strategy, 1)?;
        hasher.update(strategy.name().as_bytes());
        hasher.update(run.report.to_csv().as_bytes());
    }
    Ok(hex::encode(hasher.finalize()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flipped_adam_fails_descent() {
        fn flipped(p: &mut ParamVector, g: &GradVector, s: &mut AdamState, lr: f64) -> h2c_core::Result<()> {
            let mut neg = g.clone();
            neg.scale(-1.0);
            adam_step(p, &neg, s, lr)
        }
        assert!(adam_descent(adam_step).is_ok());
        assert!(adam_descent(flipped).is_err());
    }

    #[test]
    fn replacement_extremes() {
        assert_eq!(replacement_rate(2.0, 0.0, 1000, 3), 1.0);
        assert_eq!(replacement_rate(0.5, 1.5, 1000, 3), 0.0);
    }
}
