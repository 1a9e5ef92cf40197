//! Synthetic blob scenes and Gaussian point splatting.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::annotations::{write_annotations, SceneRecord};
use super::raster::DensityRaster;
use super::{pnm, AnnotatedScene, Point};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Sum of unit-amplitude Gaussian blobs on a `size × size` grid, sampled at pixel centres. Unclipped.
pub fn blob_field(points: &[Point], size: usize, blob_sigma: f64) -> Vec<f64> {
    let mut field = vec![0.0; size * size];
    let inv = 1.0 / (2.0 * blob_sigma * blob_sigma);
    let reach = (5.0 * blob_sigma).ceil() as isize;
    for p in points {
        let (ci, cj) = (p.y.floor() as isize, p.x.floor() as isize);
        for i in (ci - reach).max(0)..(ci + reach + 1).min(size as isize) {
            let dy = i as f64 + 0.5 - p.y;
            for j in (cj - reach).max(0)..(cj + reach + 1).min(size as isize) {
                let dx = j as f64 + 0.5 - p.x;
                field[i as usize * size + j as usize] += (-(dx * dx + dy * dy) * inv).exp();
            }
        }
    }
    field
}

/// Blobs at `n_points` uniform positions plus `U(0, noise)` per pixel, clipped to `[0, 1]`.
pub fn synth_scene<R: Rng + ?Sized>(
    rng: &mut R,
    size: usize,
    n_points: usize,
    blob_sigma: f64,
    noise: f64,
) -> Result<AnnotatedScene> {
    let extent = size as f64;
    let points: Vec<Point> = (0..n_points)
        .map(|_| Point::new(rng.gen_range(0.0..extent), rng.gen_range(0.0..extent)))
        .collect();
    let field = blob_field(&points, size, blob_sigma);
    let plane = size * size;
    let mut data = vec![0.0f32; 3 * plane];
    for (i, &f) in field.iter().enumerate() {
        let n = if noise > 0.0 { rng.gen_range(0.0..noise) } else { 0.0 };
        let v = (f + n).clamp(0.0, 1.0) as f32;
        for c in 0..3 {
            data[c * plane + i] = v;
        }
    }
    AnnotatedScene::new("synthetic", Tensor::from_vec(vec![3, size, size], data)?, points)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_scenes: usize,
    pub size: usize,
    pub min_points: usize,
    pub max_points: usize,
    pub blob_sigma: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_scenes: 8,
            size: 128,
            min_points: 5,
            max_points: 20,
            blob_sigma: 3.0,
            noise: 0.05,
            seed: 0,
        }
    }
}

/// Scenes named `scene_0000.pgm`, ...; each scene draws from its own stream keyed by the seed.
pub fn synth_dataset(cfg: &SynthConfig) -> Result<Vec<AnnotatedScene>> {
    if cfg.min_points > cfg.max_points {
        return Err(Error::invalid("synth_dataset", "min_points exceeds max_points"));
    }
    (0..cfg.n_scenes)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i as u64);
            let n = rng.gen_range(cfg.min_points..=cfg.max_points);
            let mut s = synth_scene(&mut rng, cfg.size, n, cfg.blob_sigma, cfg.noise)?;
            s.id = format!("scene_{i:04}.pgm");
            Ok(s)
        })
        .collect()
}

/// Writes grayscale images plus `annotations.jsonl` into `dir`.
pub fn write_dataset(dir: &Path, scenes: &[AnnotatedScene]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut records = Vec::with_capacity(scenes.len());
    for s in scenes {
        pnm::write_pgm(&dir.join(&s.id), &s.image)?;
        records.push(SceneRecord::new(s.id.clone(), &s.points));
    }
    write_annotations(&dir.join("annotations.jsonl"), &records)
}

/// Discrete Gaussian weights over `[c - r, c + r]` normalised to unit sum.
fn window(center: f64, sigma: f64) -> (isize, Vec<f64>) {
    let r = (4.0 * sigma).ceil() as isize + 1;
    let c = center.floor() as isize;
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut w: Vec<f64> = (c - r..=c + r)
        .map(|k| {
            let d = k as f64 + 0.5 - center;
            (-d * d * inv).exp()
        })
        .collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    (c - r, w)
}

/// Each point adds a unit-mass discrete Gaussian; mass falling off the raster is lost.
/// Returns the raster and its total mass.
pub fn gaussian_splat(points: &[Point], h: usize, w: usize, sigma: f64) -> Result<(DensityRaster, f64)> {
    if sigma.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        return Err(Error::invalid("gaussian_splat", format!("sigma must be positive, got {sigma}")));
    }
    let mut acc = vec![0.0f64; h * w];
    for p in points {
        let (y0, wy) = window(p.y, sigma);
        let (x0, wx) = window(p.x, sigma);
        for (a, &vy) in wy.iter().enumerate() {
            let i = y0 + a as isize;
            if i < 0 || i >= h as isize {
                continue;
            }
            let row = i as usize * w;
            for (b, &vx) in wx.iter().enumerate() {
                let j = x0 + b as isize;
                if j >= 0 && j < w as isize {
                    acc[row + j as usize] += vy * vx;
                }
            }
        }
    }
    let mass = acc.iter().sum();
    let raster = DensityRaster::new(h, w, acc.into_iter().map(|v| v as f32).collect())?;
    Ok((raster, mass))
}
