use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower-triangular grid of per-task errors: entry `(i, j)` is the error on
/// task `j` measured after training through task `i`, with `1 <= j <= i <= N`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultMatrix {
    n_tasks: usize,
    rows: Vec<Vec<Option<f64>>>,
}

impl ResultMatrix {
    pub fn new(n_tasks: usize) -> Self {
        ResultMatrix {
            n_tasks,
            rows: (1..=n_tasks).map(|i| vec![None; i]).collect(),
        }
    }

    pub fn n_tasks(&self) -> usize {
        self.n_tasks
    }

    fn check(&self, after: usize, tested: usize) -> Result<()> {
        if after == 0 || tested == 0 || after > self.n_tasks {
            return Err(Error::Matrix {
                after,
                tested,
                reason: "out of range",
            });
        }
        if tested > after {
            return Err(Error::Matrix {
                after,
                tested,
                reason: "above the diagonal",
            });
        }
        Ok(())
    }

    pub fn set(&mut self, after: usize, tested: usize, value: f64) -> Result<()> {
        self.check(after, tested)?;
        if !(value >= 0.0 && value.is_finite()) {
            return Err(Error::Matrix {
                after,
                tested,
                reason: "negative or non-finite",
            });
        }
        self.rows[after - 1][tested - 1] = Some(value);
        Ok(())
    }

    pub fn get(&self, after: usize, tested: usize) -> Result<f64> {
        self.check(after, tested)?;
        self.rows[after - 1][tested - 1].ok_or(Error::Matrix {
            after,
            tested,
            reason: "undefined",
        })
    }

    pub fn is_defined(&self, after: usize, tested: usize) -> bool {
        self.get(after, tested).is_ok()
    }

    /// Defined entries as `(after, tested, value)`, row by row.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.rows.iter().enumerate().flat_map(|(i, row)| {
            row.iter()
                .enumerate()
                .filter_map(move |(j, v)| v.map(|v| (i + 1, j + 1, v)))
        })
    }

    /// Row `after`, if every entry in it is defined.
    pub fn row(&self, after: usize) -> Result<Vec<f64>> {
        (1..=after).map(|j| self.get(after, j)).collect()
    }
}
