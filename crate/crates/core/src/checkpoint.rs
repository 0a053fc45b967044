//! JSON checkpoints: predictor config, parameters and optionally the
//! optimizer state and replay buffers needed to resume a run.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory::{CompletionBuffer, SeparationBuffer};
use crate::predictor::{AdamState, ParamVector, Predictor, PredictorConfig};

pub const FORMAT: &str = "h2c-checkpoint/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    /// Task after which the parameters were captured, if any.
    pub after_task: Option<u32>,
    pub predictor: PredictorConfig,
    pub params: ParamVector,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<AdamState>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub separation: Option<SeparationBuffer>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completion: Option<CompletionBuffer>,
}

impl Checkpoint {
    pub fn new(predictor: PredictorConfig, params: ParamVector, after_task: Option<u32>) -> Self {
        Checkpoint {
            format: FORMAT.to_string(),
            after_task,
            predictor,
            params,
            optimizer: None,
            separation: None,
            completion: None,
        }
    }

    /// Checks the format tag and that the parameter count fits the config.
    pub fn validate(&self) -> Result<()> {
        if self.format != FORMAT {
            return Err(Error::Config(format!("unsupported checkpoint format {:?}", self.format)));
        }
        let expected = Predictor::new(self.predictor.clone())?.num_params();
        if self.params.len() != expected {
            return Err(Error::Shape {
                what: "checkpoint parameters",
                expected,
                actual: self.params.len(),
            });
        }
        if self.params.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("checkpoint parameters"));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cp: Checkpoint = serde_json::from_str(text)?;
        cp.validate()?;
        Ok(cp)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use crate::memory::MemoryTriplet;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn config() -> PredictorConfig {
        PredictorConfig {
            t_obs: 3,
            k_sv: 1,
            hidden_dims: vec![5],
            grid: GridSpec::new(3, 3, [-1.0, -1.5], 1.0).unwrap(),
            seed: 9,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let model = Predictor::new(config()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut params = model.init_params();
        for v in &mut params.values {
            *v *= rng.random::<f64>() * 1e-3 + std::f64::consts::PI;
        }
        params.values[0] = 5e-324;
        params.values[1] = -0.0;
        let mut cp = Checkpoint::new(config(), params.clone(), Some(2));
        let mut adam = AdamState::new(params.len());
        adam.m[3] = 0.1 + 0.2;
        adam.step = 7;
        cp.optimizer = Some(adam);
        let mut buf: CompletionBuffer = CompletionBuffer::new(2).unwrap();
        let sample_scene = crate::domain::Scene::new(
            vec![crate::domain::AgentState::new(0.0, 0.0, 1.0, 0.0).unwrap(); 3],
            vec![vec![crate::domain::AgentState::new(0.0, 0.0, 0.0, 0.0).unwrap(); 3]],
            vec![false],
            0,
        )
        .unwrap();
        let truth = crate::domain::GroundTruth::new([1.0 / 3.0, 0.0], 1.0).unwrap();
        buf.observe(MemoryTriplet::new(sample_scene, truth, vec![1.0 / 7.0; 9]), &mut rng);
        cp.completion = Some(buf);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cp.json");
        cp.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, cp);
        for (a, b) in back.params.values.iter().zip(&params.values) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn wrong_length_is_rejected() {
        let cp = Checkpoint::new(config(), ParamVector::zeros(3), None);
        assert!(matches!(
            Checkpoint::from_json(&cp.to_json().unwrap()),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn unknown_format_is_rejected() {
        let model = Predictor::new(config()).unwrap();
        let mut cp = Checkpoint::new(config(), model.init_params(), None);
        cp.format = "other".into();
        assert!(cp.validate().is_err());
    }
}
