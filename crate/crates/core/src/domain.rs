//! Scene, ground-truth and sample types shared by every module.
//!
//! Positions are world-frame meters. The predictor and the metrics work in
//! the agent frame of a scene: origin at the target vehicle's position at the
//! current step, +x along its velocity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Kinematic state of one agent at one time step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
}

impl AgentState {
    pub fn new(x: f64, y: f64, vx: f64, vy: f64) -> Result<Self> {
        let s = AgentState { x, y, vx, vy };
        if !s.is_finite() {
            return Err(Error::NonFinite("agent state"));
        }
        Ok(s)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.vx.is_finite() && self.vy.is_finite()
    }

    pub fn position(&self) -> Point {
        [self.x, self.y]
    }

    pub fn velocity(&self) -> Point {
        [self.vx, self.vy]
    }

    pub fn speed(&self) -> f64 {
        self.vx.hypot(self.vy)
    }
}

/// Observation window and neighbor layout shared by generation, ingestion
/// and the predictor input.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneGeometry {
    /// Observed history steps, ending at the current step.
    pub t_obs: usize,
    /// Steps between the current step and the predicted endpoint.
    pub t_pred: usize,
    /// Neighbor slots.
    pub k_sv: usize,
    /// Seconds per step.
    pub dt: f64,
}

impl Default for SceneGeometry {
    fn default() -> Self {
        SceneGeometry {
            t_obs: 10,
            t_pred: 30,
            k_sv: 4,
            dt: 0.1,
        }
    }
}

impl SceneGeometry {
    pub fn validate(&self) -> Result<()> {
        if self.t_obs < 2 {
            return Err(Error::Config("t_obs must be at least 2".into()));
        }
        if self.t_pred < 1 {
            return Err(Error::Config("t_pred must be at least 1".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config("dt must be positive".into()));
        }
        Ok(())
    }

    /// Frames covered by one sample: history plus horizon.
    pub fn span(&self) -> usize {
        self.t_obs + self.t_pred
    }
}

/// Model input: target-vehicle history plus fixed neighbor slots.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    tv_history: Vec<AgentState>,
    sv_histories: Vec<Vec<AgentState>>,
    sv_mask: Vec<bool>,
    t_c: i64,
}

impl Scene {
    /// Builds a scene. Masked-out neighbor slots are zero-filled regardless of
    /// what was passed in.
    pub fn new(
        tv_history: Vec<AgentState>,
        mut sv_histories: Vec<Vec<AgentState>>,
        sv_mask: Vec<bool>,
        t_c: i64,
    ) -> Result<Self> {
        if tv_history.is_empty() {
            return Err(Error::InvalidInput("empty target history".into()));
        }
        if sv_histories.len() != sv_mask.len() {
            return Err(Error::Shape {
                what: "neighbor mask",
                expected: sv_histories.len(),
                actual: sv_mask.len(),
            });
        }
        let t_obs = tv_history.len();
        for (slot, valid) in sv_histories.iter_mut().zip(&sv_mask) {
            if *valid {
                if slot.len() != t_obs {
                    return Err(Error::Shape {
                        what: "neighbor history",
                        expected: t_obs,
                        actual: slot.len(),
                    });
                }
            } else {
                *slot = vec![AgentState::default(); t_obs];
            }
        }
        let all_finite = tv_history
            .iter()
            .chain(sv_histories.iter().flatten())
            .all(AgentState::is_finite);
        if !all_finite {
            return Err(Error::NonFinite("scene"));
        }
        Ok(Scene {
            tv_history,
            sv_histories,
            sv_mask,
            t_c,
        })
    }

    pub fn tv_history(&self) -> &[AgentState] {
        &self.tv_history
    }

    pub fn sv_histories(&self) -> &[Vec<AgentState>] {
        &self.sv_histories
    }

    pub fn sv_mask(&self) -> &[bool] {
        &self.sv_mask
    }

    pub fn t_c(&self) -> i64 {
        self.t_c
    }

    pub fn t_obs(&self) -> usize {
        self.tv_history.len()
    }

    pub fn k_sv(&self) -> usize {
        self.sv_histories.len()
    }

    /// Target-vehicle state at the current step.
    pub fn current(&self) -> &AgentState {
        self.tv_history.last().expect("scene history is non-empty")
    }

    pub fn agent_frame(&self) -> AgentFrame {
        let now = self.current();
        let origin = now.position();
        let speed = now.speed();
        let heading = if speed > 1e-9 {
            [now.vx / speed, now.vy / speed]
        } else {
            let first = self.tv_history[0].position();
            let d = [origin[0] - first[0], origin[1] - first[1]];
            let n = d[0].hypot(d[1]);
            if n > 1e-9 {
                [d[0] / n, d[1] / n]
            } else {
                [1.0, 0.0]
            }
        };
        AgentFrame { origin, heading }
    }
}

/// Rigid frame centered on the target vehicle, +x along its heading.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AgentFrame {
    pub origin: Point,
    /// Unit vector.
    pub heading: Point,
}

impl AgentFrame {
    pub fn to_local(&self, p: Point) -> Point {
        let d = [p[0] - self.origin[0], p[1] - self.origin[1]];
        let [hx, hy] = self.heading;
        [d[0] * hx + d[1] * hy, -d[0] * hy + d[1] * hx]
    }

    pub fn to_world(&self, p: Point) -> Point {
        let [hx, hy] = self.heading;
        [
            self.origin[0] + p[0] * hx - p[1] * hy,
            self.origin[1] + p[0] * hy + p[1] * hx,
        ]
    }

    pub fn rotate_to_local(&self, v: Point) -> Point {
        let [hx, hy] = self.heading;
        [v[0] * hx + v[1] * hy, -v[0] * hy + v[1] * hx]
    }
}

/// Future endpoint and target speed at the current step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub endpoint: Point,
    pub speed_v: f64,
}

impl GroundTruth {
    pub fn new(endpoint: Point, speed_v: f64) -> Result<Self> {
        if !(endpoint[0].is_finite() && endpoint[1].is_finite()) {
            return Err(Error::NonFinite("ground-truth endpoint"));
        }
        if !(speed_v >= 0.0 && speed_v.is_finite()) {
            return Err(Error::InvalidInput(format!("target speed {speed_v} must be >= 0")));
        }
        Ok(GroundTruth { endpoint, speed_v })
    }
}

/// One stream element. The task label is evaluation metadata; reads go
/// through [`Sample::task_label`], which is counted per thread by [`audit`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub scene: Scene,
    pub truth: GroundTruth,
    task_label: u32,
}

impl Sample {
    pub fn new(scene: Scene, truth: GroundTruth, task_label: u32) -> Result<Self> {
        if task_label < 1 {
            return Err(Error::InvalidInput("task labels start at 1".into()));
        }
        Ok(Sample {
            scene,
            truth,
            task_label,
        })
    }

    pub fn task_label(&self) -> u32 {
        audit::record_label_read();
        self.task_label
    }
}

/// Per-thread counter of task-label reads.
pub mod audit {
    use std::cell::Cell;

    thread_local! {
        static LABEL_READS: Cell<u64> = const { Cell::new(0) };
    }

    pub(crate) fn record_label_read() {
        LABEL_READS.with(|c| c.set(c.get() + 1));
    }

    /// Task-label reads performed on the calling thread so far.
    pub fn label_reads() -> u64 {
        LABEL_READS.with(Cell::get)
    }
}
