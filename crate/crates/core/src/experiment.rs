//! Train/test splitting, checkpoint evaluation and single (strategy, seed)
//! experiment cells.

use serde::{Deserialize, Serialize};

use crate::domain::{Sample, SceneGeometry};
use crate::error::{Error, Result};
use crate::learner::{train_stream, StrategyKind, TaskCheckpoint, TrainConfig, TrainOutcome};
use crate::matrix::ResultMatrix;
use crate::metrics::{extract_endpoints, fde_sample, mr_task, EvalReport, MissCase, PredictionSet};
use crate::predictor::{ParamVector, Predictor, PredictorConfig};
use crate::scenarios::{generate_task, shuffle_within_tasks, StreamSpec};

/// Every fifth generated sample (index % 5 == 4) is held out.
pub fn is_test_index(i: usize) -> bool {
    i % 5 == 4
}

#[derive(Clone, Debug)]
pub struct TaskSplit {
    pub label: u32,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

/// Per-task train/test splits in stream order.
#[derive(Clone, Debug)]
pub struct ExperimentData {
    pub tasks: Vec<TaskSplit>,
}

impl ExperimentData {
    /// Splits each task by generation index. Task `k` (0-based) gets label
    /// `k + 1`.
    pub fn from_tasks(tasks: Vec<Vec<Sample>>) -> Self {
        let tasks = tasks
            .into_iter()
            .enumerate()
            .map(|(k, samples)| {
                let (test, train): (Vec<_>, Vec<_>) =
                    samples.into_iter().enumerate().partition(|(i, _)| is_test_index(*i));
                TaskSplit {
                    label: k as u32 + 1,
                    train: train.into_iter().map(|(_, s)| s).collect(),
                    test: test.into_iter().map(|(_, s)| s).collect(),
                }
            })
            .collect();
        ExperimentData { tasks }
    }

    pub fn generate(spec: &StreamSpec, geometry: &SceneGeometry) -> Result<Self> {
        spec.validate()?;
        let tasks = spec
            .tasks
            .iter()
            .enumerate()
            .map(|(i, t)| generate_task(t, i as u32 + 1, geometry))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_tasks(tasks))
    }

    pub fn n_tasks(&self) -> usize {
        self.tasks.len()
    }

    /// Training stream with each task shuffled by `seed`.
    pub fn stream(&self, seed: u64) -> Vec<Sample> {
        shuffle_within_tasks(self.tasks.iter().map(|t| t.train.clone()).collect(), seed)
    }

    pub fn train_len(&self) -> usize {
        self.tasks.iter().map(|t| t.train.len()).sum()
    }
}

/// Decodes `w` world-frame endpoints for one sample.
pub fn predict_endpoints(model: &Predictor, params: &ParamVector, sample: &Sample, w: usize) -> Result<PredictionSet> {
    let hm = model.forward(params, &sample.scene)?;
    let local = extract_endpoints(&hm, w)?;
    let frame = sample.scene.agent_frame();
    Ok(PredictionSet {
        endpoints: local.endpoints.iter().map(|&p| frame.to_world(p)).collect(),
    })
}

/// Mean FDE and MR (percent) over a test set.
pub fn evaluate_task(model: &Predictor, params: &ParamVector, test: &[Sample], w: usize) -> Result<(f64, f64)> {
    if test.is_empty() {
        return Err(Error::InvalidInput("empty test set".into()));
    }
    let mut fde = 0.0;
    let mut cases = Vec::with_capacity(test.len());
    for s in test {
        let pred = predict_endpoints(model, params, s, w)?;
        fde += fde_sample(&pred, &s.truth)?;
        cases.push(MissCase {
            pred,
            truth: s.truth,
            heading: s.scene.agent_frame().heading,
        });
    }
    Ok((fde / test.len() as f64, mr_task(&cases)?))
}

/// Tests every checkpoint on the tasks learned so far.
pub fn evaluate_checkpoints(
    model: &Predictor,
    checkpoints: &[TaskCheckpoint],
    data: &ExperimentData,
    w: usize,
) -> Result<EvalReport> {
    let n = data.n_tasks();
    let mut fde = ResultMatrix::new(n);
    let mut mr = ResultMatrix::new(n);
    for cp in checkpoints {
        let after = cp.after_task as usize;
        for task in data.tasks.iter().filter(|t| t.label as usize <= after) {
            let (f, m) = evaluate_task(model, &cp.params, &task.test, w)?;
            fde.set(after, task.label as usize, f)?;
            mr.set(after, task.label as usize, m)?;
        }
    }
    EvalReport::from_matrices(fde, mr)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellConfig {
    pub predictor: PredictorConfig,
    pub train: TrainConfig,
    pub endpoints: usize,
}

#[derive(Clone, Debug)]
pub struct CellRun {
    pub strategy: StrategyKind,
    pub seed: u64,
    pub report: EvalReport,
    pub outcome: TrainOutcome,
}

/// Trains one strategy with one seed and evaluates its checkpoints. The
/// seed drives the within-task shuffle, the initialization and the
/// learner's own randomness.
pub fn run_cell(data: &ExperimentData, cfg: &CellConfig, strategy: StrategyKind, seed: u64) -> Result<CellRun> {
    let model = Predictor::new(PredictorConfig {
        seed,
        ..cfg.predictor.clone()
    })?;
    let train = TrainConfig {
        seed,
        checkpoint_after_each_task: true,
        ..cfg.train.clone()
    };
    let stream = data.stream(seed);
    let outcome = train_stream(&model, &stream, strategy, &train)?;
    let report = evaluate_checkpoints(&model, &outcome.checkpoints, data, cfg.endpoints)?;
    Ok(CellRun {
        strategy,
        seed,
        report,
        outcome,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;

    fn small() -> (ExperimentData, CellConfig) {
        let geometry = SceneGeometry::default();
        let data = ExperimentData::generate(&StreamSpec::three_task(20, 5), &geometry).unwrap();
        let cfg = CellConfig {
            predictor: PredictorConfig {
                hidden_dims: vec![8],
                grid: GridSpec::new(8, 8, [-2.0, -16.0], 4.0).unwrap(),
                ..PredictorConfig::default()
            },
            train: TrainConfig {
                buffer_total: 10,
                ..TrainConfig::default()
            },
            endpoints: 6,
        };
        (data, cfg)
    }

    #[test]
    fn split_is_four_to_one() {
        let (data, _) = small();
        for t in &data.tasks {
            assert_eq!(t.train.len(), 16);
            assert_eq!(t.test.len(), 4);
        }
        assert_eq!(data.train_len(), 48);
    }

    #[test]
    fn checkpoint_matrix_is_lower_triangular() {
        let (data, cfg) = small();
        let run = run_cell(&data, &cfg, StrategyKind::H2c, 1).unwrap();
        assert_eq!(run.outcome.checkpoints.len(), 3);
        for i in 1..=3 {
            for j in 1..=3 {
                assert_eq!(run.report.fde_matrix.is_defined(i, j), j <= i);
            }
        }
        assert!(run.report.fde_bwt.is_some());
    }

    #[test]
    fn joint_has_final_row_only() {
        let (data, cfg) = small();
        let run = run_cell(&data, &cfg, StrategyKind::Joint, 1).unwrap();
        assert_eq!(run.report.fde_per_task.len(), 3);
        assert!(run.report.fde_bwt.is_none());
    }
}
