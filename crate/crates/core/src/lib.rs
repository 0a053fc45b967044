//! Task-free continual learning for streaming trajectory prediction.
//!
//! A compact heatmap predictor is trained on a one-pass stream of driving
//! scenarios while two bounded replay stores (a gradient-diversity
//! separation buffer and a reservoir completion buffer) limit forgetting.

pub mod checkpoint;
pub mod domain;
pub mod error;
pub mod experiment;
pub mod grid;
pub mod learner;
pub mod losses;
pub mod matrix;
pub mod memory;
pub mod metrics;
pub mod predictor;
pub mod scenarios;

pub use checkpoint::Checkpoint;
pub use domain::{AgentFrame, AgentState, GroundTruth, Sample, Scene, SceneGeometry};
pub use error::{Error, Result};
pub use experiment::{run_cell, CellConfig, CellRun, ExperimentData};
pub use grid::{Cell, GridSpec, Heatmap};
pub use learner::{train_stream, StrategyKind, TrainConfig, TrainOutcome};
pub use losses::{BaseKind, LossSpec};
pub use matrix::ResultMatrix;
pub use memory::{CompletionBuffer, MemoryTriplet, SeparationBuffer};
pub use metrics::{EvalReport, PredictionSet};
pub use predictor::{GradVector, ParamVector, Predictor, PredictorConfig};
