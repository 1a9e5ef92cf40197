//! Resize cap, random crop and horizontal flip.

use rand::Rng;

use super::{clamp_coord, AnnotatedScene, Point};
use crate::error::Result;
use crate::nn::bilinear_resize;
use crate::tensor::Tensor;

pub const DEFAULT_MAX_SHORTER_SIDE: usize = 2048;

/// Downscales so that `min(H, W) <= max_side`. Never upscales.
pub fn limit_shorter_side(scene: &AnnotatedScene, max_side: usize) -> Result<AnnotatedScene> {
    let (h, w) = (scene.height(), scene.width());
    let short = h.min(w);
    if short <= max_side {
        return Ok(scene.clone());
    }
    let r = max_side as f64 / short as f64;
    let nh = ((h as f64 * r).round() as usize).max(1);
    let nw = ((w as f64 * r).round() as usize).max(1);
    let image = bilinear_resize(&scene.image, nh, nw)?;
    let points = scene
        .points
        .iter()
        .map(|p| {
            let mut q = Point::new(p.x * r, p.y * r);
            clamp_coord(&mut q.x, nw);
            clamp_coord(&mut q.y, nh);
            q
        })
        .collect();
    AnnotatedScene::new(scene.id.clone(), image, points)
}

/// Zero-pads right and bottom to at least `min_h × min_w`.
pub fn pad_to_at_least(scene: &AnnotatedScene, min_h: usize, min_w: usize) -> AnnotatedScene {
    let (h, w) = (scene.height(), scene.width());
    if h >= min_h && w >= min_w {
        return scene.clone();
    }
    let (nh, nw) = (h.max(min_h), w.max(min_w));
    let mut data = vec![0.0f32; 3 * nh * nw];
    let src = scene.image.data();
    for c in 0..3 {
        for i in 0..h {
            let s = (c * h + i) * w;
            let d = (c * nh + i) * nw;
            data[d..d + w].copy_from_slice(&src[s..s + w]);
        }
    }
    AnnotatedScene {
        id: scene.id.clone(),
        image: Tensor::from_vec(vec![3, nh, nw], data).expect("shape matches"),
        points: scene.points.clone(),
    }
}

/// Square window `[left, left+size) × [top, top+size)`; points outside are dropped.
pub fn crop(scene: &AnnotatedScene, top: usize, left: usize, size: usize) -> Result<AnnotatedScene> {
    let (h, w) = (scene.height(), scene.width());
    if size == 0 || top + size > h || left + size > w {
        return Err(crate::Error::invalid(
            "crop",
            format!("window {size}x{size} at ({top}, {left}) outside {h}x{w}"),
        ));
    }
    let src = scene.image.data();
    let mut data = Vec::with_capacity(3 * size * size);
    for c in 0..3 {
        for i in top..top + size {
            let s = (c * h + i) * w + left;
            data.extend_from_slice(&src[s..s + size]);
        }
    }
    let (x0, y0) = (left as f64, top as f64);
    let (x1, y1) = (x0 + size as f64, y0 + size as f64);
    let points = scene
        .points
        .iter()
        .filter(|p| p.x >= x0 && p.x < x1 && p.y >= y0 && p.y < y1)
        .map(|p| Point::new(p.x - x0, p.y - y0))
        .collect();
    AnnotatedScene::new(scene.id.clone(), Tensor::from_vec(vec![3, size, size], data)?, points)
}

/// Mirrors the image and maps `x -> W - x`. A point at `x = 0` lands just inside the right edge.
pub fn hflip(scene: &AnnotatedScene) -> AnnotatedScene {
    let (h, w) = (scene.height(), scene.width());
    let src = scene.image.data();
    let mut data = vec![0.0f32; src.len()];
    for row in 0..3 * h {
        let base = row * w;
        for j in 0..w {
            data[base + j] = src[base + w - 1 - j];
        }
    }
    let points = scene
        .points
        .iter()
        .map(|p| {
            let mut q = Point::new(w as f64 - p.x, p.y);
            clamp_coord(&mut q.x, w);
            q
        })
        .collect();
    AnnotatedScene {
        id: scene.id.clone(),
        image: Tensor::from_vec(vec![3, h, w], data).expect("shape preserved"),
        points,
    }
}

/// Uniform random crop of `crop_size` (padding first if needed), then a fair-coin flip.
pub fn augment<R: Rng + ?Sized>(scene: &AnnotatedScene, crop_size: usize, rng: &mut R) -> Result<AnnotatedScene> {
    let padded = pad_to_at_least(scene, crop_size, crop_size);
    let top = rng.gen_range(0..=padded.height() - crop_size);
    let left = rng.gen_range(0..=padded.width() - crop_size);
    let out = crop(&padded, top, left, crop_size)?;
    Ok(if rng.gen_bool(0.5) { hflip(&out) } else { out })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scene(h: usize, w: usize, points: Vec<Point>) -> AnnotatedScene {
        let data = (0..3 * h * w).map(|i| (i % 97) as f32 / 97.0).collect();
        AnnotatedScene::new("s", Tensor::from_vec(vec![3, h, w], data).unwrap(), points).unwrap()
    }

    #[test]
    fn downscale_halves_points() {
        let s = scene(64, 64, vec![Point::new(10.0, 20.0)]);
        let out = limit_shorter_side(&s, 32).unwrap();
        assert_eq!((out.height(), out.width()), (32, 32));
        assert_eq!(out.points, vec![Point::new(5.0, 10.0)]);
    }

    #[test]
    fn no_upscale() {
        let s = scene(10, 30, vec![Point::new(1.0, 2.0)]);
        assert_eq!(limit_shorter_side(&s, 20).unwrap(), s);
    }

    #[test]
    fn full_crop_is_identity() {
        let s = scene(8, 8, vec![Point::new(3.5, 7.9)]);
        assert_eq!(crop(&s, 0, 0, 8).unwrap(), s);
    }

    #[test]
    fn right_edge_point_dropped() {
        let s = scene(8, 12, vec![Point::new(6.0, 1.0), Point::new(5.99, 1.0)]);
        let out = crop(&s, 0, 2, 4).unwrap();
        assert_eq!(out.points.len(), 1);
        assert!((out.points[0].x - 3.99).abs() < 1e-12);
    }

    #[test]
    fn small_image_padded_before_crop() {
        let s = scene(5, 6, vec![Point::new(1.0, 1.0)]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = augment(&s, 8, &mut rng).unwrap();
        assert_eq!((out.height(), out.width()), (8, 8));
        assert_eq!(out.count(), 1);
    }

    proptest! {
        #[test]
        fn double_flip_is_identity(xs in prop::collection::vec((0.001f64..9.999, 0.0f64..6.0), 0..8)) {
            let s = scene(6, 10, xs.iter().map(|&(x, y)| Point::new(x, y)).collect());
            let back = hflip(&hflip(&s));
            prop_assert_eq!(&back.image, &s.image);
            for (a, b) in back.points.iter().zip(&s.points) {
                prop_assert!((a.x - b.x).abs() < 1e-12);
                prop_assert_eq!(a.y, b.y);
            }
        }

        #[test]
        fn augment_keeps_points_in_bounds(seed in 0u64..500, n in 0usize..20) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts = (0..n).map(|_| Point::new(rng.gen_range(0.0..20.0), rng.gen_range(0.0..15.0))).collect();
            let s = scene(15, 20, pts);
            let out = augment(&s, 12, &mut rng).unwrap();
            prop_assert!(out.validate().is_ok());
            prop_assert!(out.count() <= n);
        }

        #[test]
        fn limit_is_idempotent(h in 4usize..40, w in 4usize..40, cap in 4usize..30) {
            let s = scene(h, w, vec![Point::new(w as f64 - 0.01, h as f64 - 0.01)]);
            let once = limit_shorter_side(&s, cap).unwrap();
            let twice = limit_shorter_side(&once, cap).unwrap();
            prop_assert_eq!(once, twice);
        }
    }
}
