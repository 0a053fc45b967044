//! Heatmap grid geometry.
//!
//! Cell `(0, 0)` sits at the grid origin corner. Columns advance along the
//! agent-frame x axis, rows along y; storage is row-major.

use serde::{Deserialize, Serialize};

use crate::domain::{GroundTruth, Point, Scene};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub fn new(row: usize, col: usize) -> Self {
        Cell { row, col }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    /// Agent-frame coordinates of the outer corner of cell (0, 0).
    pub origin: Point,
    pub cell_size: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            rows: 32,
            cols: 32,
            origin: [-2.0, -16.0],
            cell_size: 1.0,
        }
    }
}

impl GridSpec {
    pub fn new(rows: usize, cols: usize, origin: Point, cell_size: f64) -> Result<Self> {
        let g = GridSpec {
            rows,
            cols,
            origin,
            cell_size,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows < 2 || self.cols < 2 {
            return Err(Error::Config(format!(
                "grid must be at least 2x2, got {}x{}",
                self.rows, self.cols
            )));
        }
        if !(self.cell_size > 0.0 && self.cell_size.is_finite()) {
            return Err(Error::Config("cell_size must be positive".into()));
        }
        if !(self.origin[0].is_finite() && self.origin[1].is_finite()) {
            return Err(Error::Config("grid origin must be finite".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, cell: Cell) -> usize {
        cell.row * self.cols + cell.col
    }

    pub fn cell_at(&self, index: usize) -> Cell {
        Cell::new(index / self.cols, index % self.cols)
    }

    pub fn contains(&self, cell: Cell) -> bool {
        cell.row < self.rows && cell.col < self.cols
    }

    /// Nearest cell center to `p`. Points outside the grid clamp to the
    /// border.
    pub fn endpoint_to_cell(&self, p: Point) -> Cell {
        let axis = |v: f64, origin: f64, n: usize| -> usize {
            let k = ((v - origin) / self.cell_size).floor();
            if k.is_nan() || k < 0.0 {
                0
            } else if k >= n as f64 {
                n - 1
            } else {
                k as usize
            }
        };
        Cell::new(
            axis(p[1], self.origin[1], self.rows),
            axis(p[0], self.origin[0], self.cols),
        )
    }

    pub fn cell_to_center(&self, cell: Cell) -> Result<Point> {
        if !self.contains(cell) {
            return Err(Error::CellOutOfRange {
                row: cell.row,
                col: cell.col,
                rows: self.rows,
                cols: self.cols,
            });
        }
        Ok([
            self.origin[0] + (cell.col as f64 + 0.5) * self.cell_size,
            self.origin[1] + (cell.row as f64 + 0.5) * self.cell_size,
        ])
    }

    /// Training target: the cell holding the ground-truth endpoint in the
    /// scene's agent frame.
    pub fn target_cell(&self, scene: &Scene, truth: &GroundTruth) -> Cell {
        self.endpoint_to_cell(scene.agent_frame().to_local(truth.endpoint))
    }
}

/// Predicted logits over the grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub logits: Vec<f64>,
    pub spec: GridSpec,
}

impl Heatmap {
    pub fn new(logits: Vec<f64>, spec: GridSpec) -> Result<Self> {
        if logits.len() != spec.len() {
            return Err(Error::Shape {
                what: "heatmap logits",
                expected: spec.len(),
                actual: logits.len(),
            });
        }
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("heatmap logits"));
        }
        Ok(Heatmap { logits, spec })
    }

    pub fn logit(&self, cell: Cell) -> f64 {
        self.logits[self.spec.index(cell)]
    }

    pub fn probabilities(&self) -> Vec<f64> {
        softmax(&self.logits)
    }
}

pub(crate) fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid() -> GridSpec {
        GridSpec::new(8, 10, [-3.0, -4.0], 0.5).unwrap()
    }

    fn brute_nearest(g: &GridSpec, p: Point) -> f64 {
        let mut best = f64::INFINITY;
        for r in 0..g.rows {
            for c in 0..g.cols {
                let cx = g.origin[0] + (c as f64 + 0.5) * g.cell_size;
                let cy = g.origin[1] + (r as f64 + 0.5) * g.cell_size;
                best = best.min((cx - p[0]).hypot(cy - p[1]));
            }
        }
        best
    }

    #[test]
    fn center_maps_to_its_cell() {
        let g = grid();
        let c = g.cell_to_center(Cell::new(3, 5)).unwrap();
        assert_eq!(g.endpoint_to_cell(c), Cell::new(3, 5));
    }

    #[test]
    fn origin_maps_to_first_cell() {
        let g = GridSpec::new(4, 4, [0.0, 0.0], 1.0).unwrap();
        assert_eq!(g.endpoint_to_cell([0.0, 0.0]), Cell::new(0, 0));
    }

    #[test]
    fn far_positive_x_clamps_to_last_column() {
        let g = grid();
        let p = [1e6, 0.3];
        let cell = g.endpoint_to_cell(p);
        assert_eq!(cell.col, g.cols - 1);
        let center = g.cell_to_center(cell).unwrap();
        let d = (center[0] - p[0]).hypot(center[1] - p[1]);
        assert!((d - brute_nearest(&g, p)).abs() < 1e-9);
    }

    #[test]
    fn center_of_first_and_last_cells() {
        let g = GridSpec::new(5, 6, [0.0, 0.0], 2.0).unwrap();
        assert_eq!(g.cell_to_center(Cell::new(0, 0)).unwrap(), [1.0, 1.0]);
        assert_eq!(g.cell_to_center(Cell::new(4, 5)).unwrap(), [11.0, 9.0]);
        assert!(g.cell_to_center(Cell::new(5, 0)).is_err());
        assert!(g.cell_to_center(Cell::new(0, 6)).is_err());
    }

    #[test]
    fn round_trip_displacement_bounded() {
        let g = grid();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let bound = g.cell_size * std::f64::consts::SQRT_2 / 2.0;
        let mut worst = 0.0f64;
        for _ in 0..1000 {
            let p = [
                g.origin[0] + rng.random::<f64>() * g.cols as f64 * g.cell_size,
                g.origin[1] + rng.random::<f64>() * g.rows as f64 * g.cell_size,
            ];
            let c = g.cell_to_center(g.endpoint_to_cell(p)).unwrap();
            worst = worst.max((c[0] - p[0]).hypot(c[1] - p[1]));
        }
        assert!(worst <= bound + 1e-12, "{worst} > {bound}");
    }

    #[test]
    fn rejects_degenerate_grids() {
        assert!(GridSpec::new(1, 4, [0.0, 0.0], 1.0).is_err());
        assert!(GridSpec::new(4, 4, [0.0, 0.0], 0.0).is_err());
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&[1000.0, 999.0, -5.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn nearest_center_matches_brute_force(x in -20.0f64..20.0, y in -20.0f64..20.0) {
            let g = grid();
            let cell = g.endpoint_to_cell([x, y]);
            let c = g.cell_to_center(cell).unwrap();
            let d = (c[0] - x).hypot(c[1] - y);
            prop_assert!((d - brute_nearest(&g, [x, y])).abs() < 1e-9);
        }
    }
}
