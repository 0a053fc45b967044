//! Prediction loss, replay loss with logit distillation, and the combined
//! objective over the current batch and both replay buffers.

use serde::{Deserialize, Serialize};

use crate::domain::Sample;
use crate::error::{Error, Result};
use crate::grid::{log_sum_exp, softmax, Cell, GridSpec, Heatmap};
use crate::memory::MemoryTriplet;
use crate::predictor::{GradVector, ParamVector, Predictor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaseKind {
    CrossEntropy,
    Focal { gamma: f64 },
}

impl Default for BaseKind {
    fn default() -> Self {
        BaseKind::CrossEntropy
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub base: BaseKind,
    /// Weight of the separation-buffer replay term.
    pub alpha: f64,
    /// Weight of the completion-buffer replay term.
    pub beta: f64,
}

impl Default for LossSpec {
    fn default() -> Self {
        LossSpec {
            base: BaseKind::CrossEntropy,
            alpha: 1.0,
            beta: 1.0,
        }
    }
}

impl LossSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha {} must be >= 0", self.alpha)));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("beta {} must be >= 0", self.beta)));
        }
        if let BaseKind::Focal { gamma } = self.base {
            if !(gamma >= 0.0 && gamma.is_finite()) {
                return Err(Error::Config(format!("focal gamma {gamma} must be >= 0")));
            }
        }
        Ok(())
    }
}

/// What a single sample's loss is measured against.
#[derive(Clone, Copy, Debug)]
pub enum Target<'a> {
    /// Base loss against a ground-truth cell.
    Cell(Cell),
    /// Squared logit distance to stored logits, normalized by grid size.
    Distill(&'a [f64]),
    /// Base loss plus distillation, as used for replayed memory samples.
    Replay { cell: Cell, init_logits: &'a [f64] },
}

impl Target<'_> {
    /// Per-sample loss and its gradient with respect to the logits.
    pub fn loss_and_dlogits(
        &self,
        logits: &[f64],
        grid: &GridSpec,
        kind: BaseKind,
    ) -> Result<(f64, Vec<f64>)> {
        if logits.len() != grid.len() {
            return Err(Error::Shape {
                what: "logits",
                expected: grid.len(),
                actual: logits.len(),
            });
        }
        match *self {
            Target::Cell(cell) => base_loss_and_dlogits(logits, check_cell(grid, cell)?, kind),
            Target::Distill(init) => distill_loss_and_dlogits(logits, init),
            Target::Replay { cell, init_logits } => {
                let (lb, mut gb) = base_loss_and_dlogits(logits, check_cell(grid, cell)?, kind)?;
                let (ld, gd) = distill_loss_and_dlogits(logits, init_logits)?;
                gb.iter_mut().zip(gd).for_each(|(a, b)| *a += b);
                Ok((lb + ld, gb))
            }
        }
    }
}

fn check_cell(grid: &GridSpec, cell: Cell) -> Result<usize> {
    if !grid.contains(cell) {
        return Err(Error::CellOutOfRange {
            row: cell.row,
            col: cell.col,
            rows: grid.rows,
            cols: grid.cols,
        });
    }
    Ok(grid.index(cell))
}

/// Cross-entropy `-log p_t`, or focal `(1 - p_t)^gamma * -log p_t`.
fn base_loss_and_dlogits(logits: &[f64], target: usize, kind: BaseKind) -> Result<(f64, Vec<f64>)> {
    let lse = log_sum_exp(logits);
    let log_p = (logits[target] - lse).min(0.0);
    let mut d = softmax(logits);
    match kind {
        BaseKind::CrossEntropy => {
            d[target] -= 1.0;
            Ok((-log_p, d))
        }
        BaseKind::Focal { gamma } => {
            let p = log_p.exp();
            let one_minus = -log_p.exp_m1();
            let loss = one_minus.powf(gamma) * -log_p;
            // dL/dz_j = c * (1[j = t] - p_j)
            let c = if gamma == 0.0 {
                -1.0
            } else if one_minus == 0.0 {
                0.0
            } else {
                gamma * one_minus.powf(gamma - 1.0) * p * log_p - one_minus.powf(gamma)
            };
            for (j, v) in d.iter_mut().enumerate() {
                let indicator = if j == target { 1.0 } else { 0.0 };
                *v = c * (indicator - *v);
            }
            Ok((loss, d))
        }
    }
}

fn distill_loss_and_dlogits(logits: &[f64], init: &[f64]) -> Result<(f64, Vec<f64>)> {
    if init.len() != logits.len() {
        return Err(Error::Shape {
            what: "stored logits",
            expected: logits.len(),
            actual: init.len(),
        });
    }
    let n = logits.len() as f64;
    let mut loss = 0.0;
    let d = logits
        .iter()
        .zip(init)
        .map(|(z, z0)| {
            let diff = z - z0;
            loss += diff * diff;
            2.0 * diff / n
        })
        .collect();
    Ok((loss / n, d))
}

/// Base prediction loss of a heatmap against a target cell.
pub fn base_loss(heatmap: &Heatmap, target: Cell, kind: BaseKind) -> Result<f64> {
    let idx = check_cell(&heatmap.spec, target)?;
    Ok(base_loss_and_dlogits(&heatmap.logits, idx, kind)?.0)
}

/// Mean over the batch of the base loss plus the normalized squared distance
/// between current and stored logits. An empty batch contributes zero.
pub fn replay_loss(
    model: &Predictor,
    params: &ParamVector,
    batch: &[&MemoryTriplet],
    kind: BaseKind,
) -> Result<f64> {
    if batch.is_empty() {
        return Ok(0.0);
    }
    let grid = model.grid();
    let mut total = 0.0;
    for m in batch {
        let hm = model.forward(params, &m.scene)?;
        let target = Target::Replay {
            cell: grid.target_cell(&m.scene, &m.truth),
            init_logits: &m.init_logits,
        };
        total += target.loss_and_dlogits(&hm.logits, grid, kind)?.0;
    }
    Ok(total / batch.len() as f64)
}

/// Current-batch loss plus `alpha` and `beta` weighted replay terms.
pub fn total_loss(
    model: &Predictor,
    params: &ParamVector,
    current: &[&Sample],
    sp_batch: &[&MemoryTriplet],
    cp_batch: &[&MemoryTriplet],
    spec: &LossSpec,
) -> Result<f64> {
    spec.validate()?;
    if current.is_empty() {
        return Err(Error::InvalidInput("empty current batch".into()));
    }
    let grid = model.grid();
    let mut current_loss = 0.0;
    for s in current {
        let hm = model.forward(params, &s.scene)?;
        current_loss += base_loss(&hm, grid.target_cell(&s.scene, &s.truth), spec.base)?;
    }
    current_loss /= current.len() as f64;
    Ok(current_loss
        + spec.alpha * replay_loss(model, params, sp_batch, spec.base)?
        + spec.beta * replay_loss(model, params, cp_batch, spec.base)?)
}

/// [`total_loss`] together with its gradient.
pub fn total_loss_and_grad(
    model: &Predictor,
    params: &ParamVector,
    current: &[&Sample],
    sp_batch: &[&MemoryTriplet],
    cp_batch: &[&MemoryTriplet],
    spec: &LossSpec,
) -> Result<(f64, GradVector)> {
    spec.validate()?;
    if current.is_empty() {
        return Err(Error::InvalidInput("empty current batch".into()));
    }
    let grid = model.grid();
    let mut grad = GradVector::zeros(model.num_params());
    let mut total = 0.0;
    let w = 1.0 / current.len() as f64;
    for s in current {
        let target = Target::Cell(grid.target_cell(&s.scene, &s.truth));
        total += w * model.accumulate(params, &s.scene, &target, spec.base, w, &mut grad)?;
    }
    for (coef, batch) in [(spec.alpha, sp_batch), (spec.beta, cp_batch)] {
        if coef == 0.0 || batch.is_empty() {
            continue;
        }
        let w = coef / batch.len() as f64;
        for m in batch {
            let target = Target::Replay {
                cell: grid.target_cell(&m.scene, &m.truth),
                init_logits: &m.init_logits,
            };
            total += w * model.accumulate(params, &m.scene, &target, spec.base, w, &mut grad)?;
        }
    }
    Ok((total, grad))
}
