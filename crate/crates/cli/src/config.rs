use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use h2c_core::experiment::CellConfig;
use h2c_core::grid::GridSpec;
use h2c_core::learner::{StrategyKind, TrainConfig};
use h2c_core::metrics::DEFAULT_ENDPOINTS;
use h2c_core::predictor::PredictorConfig;
use h2c_core::scenarios::StreamSpec;
use h2c_core::SceneGeometry;

/// Overrides `output_dir` when set.
pub const OUTPUT_DIR_ENV: &str = "H2C_OUTPUT_DIR";

/// Network shape; the seed comes from each repetition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub hidden_dims: Vec<usize>,
    pub grid: GridSpec,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden_dims: vec![96],
            grid: GridSpec::new(16, 16, [-2.0, -16.0], 2.0).expect("valid default grid"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub stream: StreamSpec,
    pub geometry: SceneGeometry,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub strategies: Vec<StrategyKind>,
    /// Seeds `first_seed .. first_seed + repetitions`.
    pub repetitions: usize,
    pub first_seed: u64,
    pub endpoints: usize,
    pub output_dir: PathBuf,
    /// Worker threads; all cores when absent.
    pub workers: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            stream: StreamSpec::three_task(2500, 0),
            geometry: SceneGeometry::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            strategies: StrategyKind::ALL.to_vec(),
            repetitions: 10,
            first_seed: 0,
            endpoints: DEFAULT_ENDPOINTS,
            output_dir: PathBuf::from("out"),
            workers: None,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: ExperimentConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        cfg.apply_env();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self) {
        if let Some(dir) = std::env::var_os(OUTPUT_DIR_ENV).filter(|d| !d.is_empty()) {
            self.output_dir = PathBuf::from(dir);
        }
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.repetitions < 1 {
            bail!("repetitions must be at least 1");
        }
        if self.strategies.is_empty() {
            bail!("no strategies selected");
        }
        if self.endpoints < 1 {
            bail!("endpoints must be at least 1");
        }
        if self.workers == Some(0) {
            bail!("workers must be positive");
        }
        self.stream.validate()?;
        self.geometry.validate()?;
        self.train.validate()?;
        self.predictor_config(0).validate()?;
        Ok(())
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.repetitions as u64).map(|k| self.first_seed + k).collect()
    }

    pub fn predictor_config(&self, seed: u64) -> PredictorConfig {
        PredictorConfig {
            t_obs: self.geometry.t_obs,
            k_sv: self.geometry.k_sv,
            hidden_dims: self.model.hidden_dims.clone(),
            grid: self.model.grid,
            seed,
        }
    }

    pub fn cell_config(&self) -> CellConfig {
        CellConfig {
            predictor: self.predictor_config(0),
            train: self.train.clone(),
            endpoints: self.endpoints,
        }
    }

    pub fn data_dir(&self) -> PathBuf {
        self.output_dir.join("data")
    }

    pub fn runs_dir(&self) -> PathBuf {
        self.output_dir.join("runs")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn partial_json_fills_defaults() {
        let cfg: ExperimentConfig =
            serde_json::from_str(r#"{"repetitions": 2, "strategies": ["H2C", "Vanilla"]}"#).unwrap();
        assert_eq!(cfg.repetitions, 2);
        assert_eq!(cfg.strategies, vec![StrategyKind::H2c, StrategyKind::Vanilla]);
        assert_eq!(cfg.train, TrainConfig::default());
        assert_eq!(cfg.seeds(), vec![0, 1]);
    }

    #[test]
    fn zero_repetitions_rejected() {
        let cfg = ExperimentConfig {
            repetitions: 0,
            ..ExperimentConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
