//! Brute-force reference implementations of the metrics, written
//! independently of the library code they check.

use h2c_core::domain::Point;
use h2c_core::grid::GridSpec;

/// Center of `(row, col)` straight from the grid definition.
pub fn center(spec: &GridSpec, row: usize, col: usize) -> Point {
    [
        spec.origin[0] + (col as f64 + 0.5) * spec.cell_size,
        spec.origin[1] + (row as f64 + 0.5) * spec.cell_size,
    ]
}

/// Nearest cell center by exhaustive search.
pub fn nearest_cell(spec: &GridSpec, p: Point) -> (usize, usize) {
    let mut best = (0, 0);
    let mut best_d = f64::INFINITY;
    for r in 0..spec.rows {
        for c in 0..spec.cols {
            let q = center(spec, r, c);
            let d = (q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2);
            if d < best_d {
                best_d = d;
                best = (r, c);
            }
        }
    }
    best
}

/// Top `w` strict local maxima (clipped 3x3) by probability, padded with
/// the most probable remaining cells; ties in `(row, col)` order.
pub fn endpoints(spec: &GridSpec, logits: &[f64], w: usize) -> Vec<Point> {
    let (rows, cols) = (spec.rows as i64, spec.cols as i64);
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
    let prob = |r: i64, c: i64| ((logits[(r * cols + c) as usize] - m).exp()) / z;
    let value = |r: i64, c: i64| logits[(r * cols + c) as usize];

    let mut peaks = Vec::new();
    let mut others = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let mut strict = true;
            for dr in -1..=1 {
                for dc in -1..=1 {
                    let (nr, nc) = (r + dr, c + dc);
                    if (dr, dc) == (0, 0) || nr < 0 || nc < 0 || nr >= rows || nc >= cols {
                        continue;
                    }
                    if value(nr, nc) >= value(r, c) {
                        strict = false;
                    }
                }
            }
            if strict {
                peaks.push((r, c));
            } else {
                others.push((r, c));
            }
        }
    }
    let order = |a: &(i64, i64), b: &(i64, i64)| {
        prob(b.0, b.1)
            .partial_cmp(&prob(a.0, a.1))
            .unwrap()
            .then(a.cmp(b))
    };
    peaks.sort_by(order);
    peaks.truncate(w);
    if peaks.len() < w {
        let mut rest = others;
        rest.sort_by(order);
        let need = w - peaks.len();
        peaks.extend(rest.into_iter().take(need));
    }
    peaks
        .into_iter()
        .map(|(r, c)| center(spec, r as usize, c as usize))
        .collect()
}

pub fn fde(endpoints: &[Point], truth: Point) -> f64 {
    let mut best = f64::INFINITY;
    for p in endpoints {
        let d = ((p[0] - truth[0]).powi(2) + (p[1] - truth[1]).powi(2)).sqrt();
        if d < best {
            best = d;
        }
    }
    best
}

pub fn threshold(v: f64) -> f64 {
    if v < 1.4 {
        1.0
    } else if v > 11.0 {
        2.0
    } else {
        1.0 + (v - 1.4) / 9.6
    }
}

/// Miss percentage with an explicit rotation by the heading angle.
pub fn miss_rate(cases: &[(Vec<Point>, Point, f64, Point)]) -> f64 {
    let mut misses = 0usize;
    let mut total = 0usize;
    for (endpoints, truth, v, heading) in cases {
        let theta = heading[1].atan2(heading[0]);
        let (s, c) = theta.sin_cos();
        for p in endpoints {
            let (dx, dy) = (p[0] - truth[0], p[1] - truth[1]);
            // rotate by -theta
            let lon = c * dx + s * dy;
            let lat = -s * dx + c * dy;
            if lat.abs() > 1.0 || lon.abs() > threshold(*v) {
                misses += 1;
            }
            total += 1;
        }
    }
    100.0 * misses as f64 / total as f64
}

/// Backward transfer from a dense matrix, `r[i][j]` = error on task `j+1`
/// after task `i+1`.
pub fn bwt(r: &[Vec<f64>], c: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..c - 1 {
        s += r[c - 1][i] - r[i][i];
    }
    s / (c - 1) as f64
}
