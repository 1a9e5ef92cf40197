//! Posterior construction over annotation points and the training losses.

mod posterior;

pub use posterior::{build_posterior, density_grid, grid_coordinates, PosteriorMatrix, PosteriorSpec};

use crate::data::{gaussian_splat, Point};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// Bayesian expectation loss plus weighted counting loss.
    Combined,
    /// Squared error against a splatted density; for comparison only.
    PixelMse,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupervisionConfig {
    pub sigma: f64,
    /// Background margin as a fraction of the crop's shorter side.
    pub bg_margin_ratio: f64,
    pub use_background: bool,
    pub lambda: f64,
    pub kind: LossKind,
}

impl Default for SupervisionConfig {
    fn default() -> Self {
        Self {
            sigma: 8.0,
            bg_margin_ratio: 0.15,
            use_background: true,
            lambda: 0.1,
            kind: LossKind::Combined,
        }
    }
}

impl SupervisionConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.sigma) {
            return Err(Error::invalid("supervision", format!("sigma must be > 0, got {}", self.sigma)));
        }
        if !positive(self.bg_margin_ratio) {
            return Err(Error::invalid(
                "supervision",
                format!("bg_margin_ratio must be > 0, got {}", self.bg_margin_ratio),
            ));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::invalid("supervision", format!("lambda must be >= 0, got {}", self.lambda)));
        }
        Ok(())
    }

    /// Posterior settings for a crop of `h × w` input pixels.
    pub fn posterior_spec(&self, h: usize, w: usize) -> PosteriorSpec {
        PosteriorSpec {
            sigma: self.sigma,
            margin: self.use_background.then(|| self.bg_margin_ratio * h.min(w) as f64),
        }
    }
}

/// Loss terms recorded for logging.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts<T> {
    pub bayes: T,
    pub count: T,
    pub total: T,
}

/// `Σ_n |1 − E[c_n]| + |E[c_0]|` with `E[c] = Pᵀd`. `density` holds `M` cells.
pub fn bayesian_loss<T: Scalar>(tape: &mut Tape<T>, density: Var, posterior: &PosteriorMatrix) -> Result<Var> {
    let m = tape.value(density).len();
    if m != posterior.rows() {
        return Err(Error::ShapeMismatch {
            op: "bayesian_loss",
            lhs: tape.shape(density).to_vec(),
            rhs: vec![posterior.rows(), posterior.cols()],
        });
    }
    let k = posterior.cols();
    let p = tape.constant(Tensor::from_vec(
        vec![m, k],
        posterior.values().iter().map(|&v| T::lit(v)).collect(),
    )?)?;
    let d = tape.reshape(density, vec![m, 1])?;
    let weighted = tape.mul(d, p)?;
    let expected = tape.reduce(crate::tensor::Reduce::Sum, weighted, &[0], T::zero(), false)?;
    let target: Vec<T> = (0..k)
        .map(|j| if posterior.has_background() && j == 0 { T::zero() } else { T::one() })
        .collect();
    let target = tape.constant(Tensor::from_vec(vec![k], target)?)?;
    let diff = tape.sub(target, expected)?;
    let dist = tape.abs(diff)?;
    tape.sum_all(dist)
}

/// `|pred − gt|`; `pred` is a one-element var.
pub fn counting_loss<T: Scalar>(tape: &mut Tape<T>, pred: Var, gt: f64) -> Result<Var> {
    let shifted = tape.offset(pred, T::lit(-gt))?;
    let abs = tape.abs(shifted)?;
    tape.reshape(abs, vec![1])
}

/// Density mass over the cells listed as kept by `mask` (1 kept, 0 dropped).
pub fn masked_count<T: Scalar>(tape: &mut Tape<T>, density: Var, mask: Option<&Tensor<T>>) -> Result<Var> {
    match mask {
        None => tape.sum_all(density),
        Some(m) => {
            let m = tape.constant(m.clone())?;
            let kept = tape.mul(density, m)?;
            tape.sum_all(kept)
        }
    }
}

/// `bayes + λ·count`. With `λ = 0` the Bayesian term is returned as is.
pub fn overall_loss<T: Scalar>(tape: &mut Tape<T>, bayes: Var, count: Var, lambda: f64) -> Result<Var> {
    if lambda == 0.0 {
        return Ok(bayes);
    }
    let weighted = tape.scale(count, T::lit(lambda))?;
    tape.add(bayes, weighted)
}

/// Sum of squared differences between `density` (`1×h×w`) and points
/// splatted at output resolution with bandwidth `sigma / stride`.
pub fn pixel_mse_loss<T: Scalar>(
    tape: &mut Tape<T>,
    density: Var,
    points: &[Point],
    sigma: f64,
    stride: usize,
) -> Result<Var> {
    let (_, h, w) = tape.value(density).chw()?;
    let s = stride as f64;
    let scaled: Vec<Point> = points.iter().map(|p| Point::new(p.x / s, p.y / s)).collect();
    let (raster, _) = gaussian_splat(&scaled, h, w, sigma / s)?;
    let gt = tape.constant(Tensor::from_vec(
        vec![1, h, w],
        raster.values.iter().map(|&v| T::lit(v as f64)).collect(),
    )?)?;
    let diff = tape.sub(density, gt)?;
    let sq = tape.mul(diff, diff)?;
    tape.sum_all(sq)
}

#[cfg(test)]
mod tests;
