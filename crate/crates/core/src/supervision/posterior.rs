use crate::data::Point;
use crate::error::{Error, Result};
use crate::model::OUTPUT_STRIDE;

/// Input-space centres of an `out_h × out_w` density grid, row-major:
/// cell `(i, j)` sits at `(s·j + s/2, s·i + s/2)`.
pub fn grid_coordinates(out_h: usize, out_w: usize, stride: usize) -> Vec<Point> {
    let half = stride as f64 / 2.0;
    let mut grid = Vec::with_capacity(out_h * out_w);
    for i in 0..out_h {
        for j in 0..out_w {
            grid.push(Point::new((stride * j) as f64 + half, (stride * i) as f64 + half));
        }
    }
    grid
}

/// Default-stride grid for a density map.
pub fn density_grid(out_h: usize, out_w: usize) -> Vec<Point> {
    grid_coordinates(out_h, out_w, OUTPUT_STRIDE)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorSpec {
    pub sigma: f64,
    /// Background margin `d` in input pixels; `None` disables the background column.
    pub margin: Option<f64>,
}

/// Row-stochastic `M × K` matrix of assignment probabilities. When the
/// background column is present it is column 0 and points follow in order.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMatrix {
    rows: usize,
    cols: usize,
    background: bool,
    values: Vec<f64>,
}

impl PosteriorMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn has_background(&self) -> bool {
        self.background
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, m: usize, k: usize) -> f64 {
        self.values[m * self.cols + k]
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.values[m * self.cols..(m + 1) * self.cols]
    }
}

/// Gaussian likelihoods `−‖x_m − z_n‖²/2σ²` and, with a margin `d`, a
/// background likelihood `−(d − min_n ‖x_m − z_n‖)²/2σ²`, normalised per
/// row in the log domain. With no points every row is pure background.
pub fn build_posterior(points: &[Point], grid: &[Point], spec: &PosteriorSpec) -> Result<PosteriorMatrix> {
    if !(spec.sigma.is_finite() && spec.sigma > 0.0) {
        return Err(Error::invalid("build_posterior", format!("sigma must be > 0, got {}", spec.sigma)));
    }
    if let Some(d) = spec.margin {
        if !(d.is_finite() && d > 0.0) {
            return Err(Error::invalid("build_posterior", format!("margin must be > 0, got {d}")));
        }
    }
    let rows = grid.len();
    if points.is_empty() {
        return Ok(PosteriorMatrix {
            rows,
            cols: 1,
            background: true,
            values: vec![1.0; rows],
        });
    }
    let background = spec.margin.is_some();
    let offset = background as usize;
    let cols = points.len() + offset;
    let inv = 1.0 / (2.0 * spec.sigma * spec.sigma);
    let mut values = vec![0.0; rows * cols];
    for (m, x) in grid.iter().enumerate() {
        let row = &mut values[m * cols..(m + 1) * cols];
        let mut nearest = f64::INFINITY;
        for (n, z) in points.iter().enumerate() {
            let sq = (x.x - z.x).powi(2) + (x.y - z.y).powi(2);
            nearest = nearest.min(sq);
            row[n + offset] = -sq * inv;
        }
        if let Some(d) = spec.margin {
            row[0] = -(d - nearest.sqrt()).powi(2) * inv;
        }
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    Ok(PosteriorMatrix {
        rows,
        cols,
        background,
        values,
    })
}
