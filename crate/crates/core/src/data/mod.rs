//! Scenes, annotation and raster formats, augmentation and synthetic data.

pub mod annotations;
pub mod pnm;
pub mod raster;
pub mod synth;
pub mod transform;

pub use annotations::{load_annotations, load_dataset, write_annotations, Dataset, SceneRecord};
pub use raster::DensityRaster;
pub use synth::{gaussian_splat, synth_dataset, synth_scene, SynthConfig};
pub use transform::{augment, crop, hflip, limit_shorter_side};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Continuous image coordinate; pixel `(j, i)` covers `[j, j+1) × [i, i+1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// Largest float strictly below `bound` (for positive `bound`).
pub(crate) fn below(bound: f64) -> f64 {
    f64::from_bits(bound.to_bits() - 1)
}

/// Pulls a coordinate into `[0, extent)`. Returns whether it moved.
pub(crate) fn clamp_coord(v: &mut f64, extent: usize) -> bool {
    let hi = extent as f64;
    if *v < 0.0 || v.is_nan() {
        *v = 0.0;
        true
    } else if *v >= hi {
        *v = below(hi);
        true
    } else {
        false
    }
}

/// An RGB raster in `[0, 1]` with its point annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedScene {
    pub id: String,
    pub image: Tensor<f32>,
    pub points: Vec<Point>,
}

impl AnnotatedScene {
    pub fn new(id: impl Into<String>, image: Tensor<f32>, points: Vec<Point>) -> Result<Self> {
        let scene = Self {
            id: id.into(),
            image,
            points,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn height(&self) -> usize {
        self.image.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.image.shape()[2]
    }

    pub fn count(&self) -> usize {
        self.points.len()
    }

    pub fn validate(&self) -> Result<()> {
        let (c, h, w) = self.image.chw()?;
        if c != 3 {
            return Err(Error::invalid("scene", format!("{}: expected 3 channels, got {c}", self.id)));
        }
        for p in &self.points {
            if !(0.0..w as f64).contains(&p.x) || !(0.0..h as f64).contains(&p.y) {
                return Err(Error::invalid(
                    "scene",
                    format!("{}: point ({}, {}) outside {w}x{h}", self.id, p.x, p.y),
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clamping() {
        let mut v = 10.0;
        assert!(clamp_coord(&mut v, 10));
        assert!(v < 10.0 && v > 9.999_999);
        let mut v = -0.5;
        assert!(clamp_coord(&mut v, 10));
        assert_eq!(v, 0.0);
        let mut v = 3.5;
        assert!(!clamp_coord(&mut v, 10));
    }

    #[test]
    fn out_of_bounds_scene_rejected() {
        let img = Tensor::zeros(vec![3, 4, 4]);
        assert!(AnnotatedScene::new("a", img.clone(), vec![Point::new(4.0, 1.0)]).is_err());
        assert!(AnnotatedScene::new("a", img, vec![Point::new(3.9, 0.0)]).is_ok());
    }
}
