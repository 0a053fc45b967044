//! Endpoint decoding and accuracy/forgetting metrics.

use serde::{Deserialize, Serialize};

use crate::domain::{GroundTruth, Point};
use crate::error::{Error, Result};
use crate::grid::{Cell, Heatmap};
use crate::matrix::ResultMatrix;

/// Number of endpoints decoded from each heatmap.
pub const DEFAULT_ENDPOINTS: usize = 6;
/// Lateral miss bound in meters.
pub const LATERAL_MISS_THRESHOLD: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub endpoints: Vec<Point>,
}

/// Cells that are strict maxima of their clipped 3x3 neighborhood, best
/// first. Ties are ordered by `(row, col)`.
pub fn local_maxima(hm: &Heatmap) -> Vec<Cell> {
    let g = &hm.spec;
    let mut peaks = Vec::new();
    for row in 0..g.rows {
        for col in 0..g.cols {
            let v = hm.logit(Cell::new(row, col));
            let is_peak = (row.saturating_sub(1)..=(row + 1).min(g.rows - 1)).all(|r| {
                (col.saturating_sub(1)..=(col + 1).min(g.cols - 1))
                    .all(|c| (r, c) == (row, col) || hm.logit(Cell::new(r, c)) < v)
            });
            if is_peak {
                peaks.push(Cell::new(row, col));
            }
        }
    }
    sort_by_score(hm, &mut peaks);
    peaks
}

fn sort_by_score(hm: &Heatmap, cells: &mut [Cell]) {
    // logits order cells exactly as probabilities do
    cells.sort_by(|a, b| hm.logit(*b).total_cmp(&hm.logit(*a)).then(a.cmp(b)));
}

/// Top `w` local maxima as cell centers, padded with the best remaining
/// cells when there are fewer than `w` peaks.
pub fn extract_endpoints(hm: &Heatmap, w: usize) -> Result<PredictionSet> {
    if w == 0 {
        return Err(Error::InvalidInput("W must be at least 1".into()));
    }
    let mut chosen = local_maxima(hm);
    chosen.truncate(w);
    if chosen.len() < w {
        let mut rest: Vec<Cell> = (0..hm.spec.len())
            .map(|i| hm.spec.cell_at(i))
            .filter(|c| !chosen.contains(c))
            .collect();
        sort_by_score(hm, &mut rest);
        let missing = w - chosen.len();
        chosen.extend(rest.into_iter().take(missing));
    }
    let endpoints = chosen
        .into_iter()
        .map(|c| hm.spec.cell_to_center(c))
        .collect::<Result<_>>()?;
    Ok(PredictionSet { endpoints })
}

/// Minimum Euclidean distance from any predicted endpoint to the truth.
pub fn fde_sample(pred: &PredictionSet, truth: &GroundTruth) -> Result<f64> {
    if pred.endpoints.is_empty() {
        return Err(Error::InvalidInput("empty prediction set".into()));
    }
    Ok(pred
        .endpoints
        .iter()
        .map(|p| {
            let (dx, dy) = (p[0] - truth.endpoint[0], p[1] - truth.endpoint[1]);
            (dx * dx + dy * dy).sqrt()
        })
        .fold(f64::INFINITY, f64::min))
}

/// Longitudinal miss bound for a target moving at `v` m/s.
pub fn mr_threshold(v: f64) -> Result<f64> {
    if !(v >= 0.0) {
        return Err(Error::InvalidInput(format!("speed {v} must be >= 0")));
    }
    Ok(if v < 1.4 {
        1.0
    } else if v <= 11.0 {
        1.0 + (v - 1.4) / (11.0 - 1.4)
    } else {
        2.0
    })
}

/// One evaluated case for the miss rate: predictions, truth and the unit
/// heading of the target at the current step.
#[derive(Clone, Debug, PartialEq)]
pub struct MissCase {
    pub pred: PredictionSet,
    pub truth: GroundTruth,
    pub heading: Point,
}

/// Whether a single endpoint falls outside the lateral/longitudinal box.
pub fn is_miss(endpoint: Point, truth: &GroundTruth, heading: Point) -> Result<bool> {
    let n = heading[0].hypot(heading[1]);
    if !(n > 0.0) {
        return Err(Error::InvalidInput("zero heading vector".into()));
    }
    let h = [heading[0] / n, heading[1] / n];
    let d = [endpoint[0] - truth.endpoint[0], endpoint[1] - truth.endpoint[1]];
    let lon = d[0] * h[0] + d[1] * h[1];
    let lat = -d[0] * h[1] + d[1] * h[0];
    Ok(lat.abs() > LATERAL_MISS_THRESHOLD || lon.abs() > mr_threshold(truth.speed_v)?)
}

/// Percentage of all predicted endpoints, over all cases, that miss.
pub fn mr_task(cases: &[MissCase]) -> Result<f64> {
    let mut total = 0usize;
    let mut misses = 0usize;
    for case in cases {
        for &p in &case.pred.endpoints {
            total += 1;
            misses += is_miss(p, &case.truth, case.heading)? as usize;
        }
    }
    if total == 0 {
        return Err(Error::InvalidInput("no endpoints to score".into()));
    }
    Ok(100.0 * misses as f64 / total as f64)
}

/// Mean error increment on tasks `1..c` after learning task `c`.
pub fn bwt(matrix: &ResultMatrix, c: usize) -> Result<f64> {
    if c < 2 {
        return Err(Error::InvalidInput(format!("BWT needs c >= 2, got {c}")));
    }
    let mut sum = 0.0;
    for i in 1..c {
        sum += matrix.get(c, i)? - matrix.get(i, i)?;
    }
    Ok(sum / (c - 1) as f64)
}

pub fn averages(per_task: &[f64]) -> Result<f64> {
    if per_task.is_empty() {
        return Err(Error::InvalidInput("no tasks to average".into()));
    }
    Ok(per_task.iter().sum::<f64>() / per_task.len() as f64)
}

/// Error summary of one training run, derived entirely from its two result
/// matrices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_tasks: usize,
    /// Per-task errors of the final model.
    pub fde_per_task: Vec<f64>,
    pub mr_per_task: Vec<f64>,
    pub fde_avg: f64,
    pub mr_avg: f64,
    /// `None` when the diagonal is not available (joint training).
    pub fde_bwt: Option<f64>,
    pub mr_bwt: Option<f64>,
    /// BWT after each task `c = 2..=N`.
    pub fde_bwt_by_task: Vec<f64>,
    pub mr_bwt_by_task: Vec<f64>,
    pub fde_matrix: ResultMatrix,
    pub mr_matrix: ResultMatrix,
}

impl EvalReport {
    pub fn from_matrices(fde_matrix: ResultMatrix, mr_matrix: ResultMatrix) -> Result<Self> {
        let n = fde_matrix.n_tasks();
        if mr_matrix.n_tasks() != n {
            return Err(Error::Shape {
                what: "MR matrix tasks",
                expected: n,
                actual: mr_matrix.n_tasks(),
            });
        }
        let fde_per_task = fde_matrix.row(n)?;
        let mr_per_task = mr_matrix.row(n)?;
        let by_task = |m: &ResultMatrix| -> Vec<f64> {
            (2..=n).map_while(|c| bwt(m, c).ok()).collect()
        };
        let fde_bwt_by_task = by_task(&fde_matrix);
        let mr_bwt_by_task = by_task(&mr_matrix);
        let final_bwt = |v: &Vec<f64>| (n >= 2 && v.len() == n - 1).then(|| v[n - 2]);
        Ok(EvalReport {
            n_tasks: n,
            fde_avg: averages(&fde_per_task)?,
            mr_avg: averages(&mr_per_task)?,
            fde_bwt: final_bwt(&fde_bwt_by_task),
            mr_bwt: final_bwt(&mr_bwt_by_task),
            fde_per_task,
            mr_per_task,
            fde_bwt_by_task,
            mr_bwt_by_task,
            fde_matrix,
            mr_matrix,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// One row per defined `(after_task, tested_task)` cell.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("after_task,tested_task,fde,mr\n");
        for (i, j, fde) in self.fde_matrix.entries() {
            let mr = self.mr_matrix.get(i, j).map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!("{i},{j},{fde},{mr}\n"));
        }
        out
    }

    /// Rebuilds the report from [`EvalReport::to_csv`] output.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (k, line) in text.lines().enumerate() {
            if k == 0 || line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            let bad = |m: &str| Error::Csv {
                line: k as u64 + 1,
                message: m.to_string(),
            };
            if f.len() != 4 {
                return Err(bad("expected 4 fields"));
            }
            let i: usize = f[0].parse().map_err(|_| bad("bad after_task"))?;
            let j: usize = f[1].parse().map_err(|_| bad("bad tested_task"))?;
            let fde: f64 = f[2].parse().map_err(|_| bad("bad fde"))?;
            let mr: f64 = f[3].parse().map_err(|_| bad("bad mr"))?;
            rows.push((i, j, fde, mr));
        }
        let n = rows.iter().map(|r| r.0).max().unwrap_or(0);
        let mut fde = ResultMatrix::new(n);
        let mut mr = ResultMatrix::new(n);
        for (i, j, a, b) in rows {
            fde.set(i, j, a)?;
            mr.set(i, j, b)?;
        }
        EvalReport::from_matrices(fde, mr)
    }
}
