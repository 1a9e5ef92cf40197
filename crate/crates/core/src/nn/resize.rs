//! Bilinear resampling with half-pixel centers and edge clamping.

use crate::error::{Error, Result};
use crate::tensor::{Op, Scalar, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy)]
struct Taps<T> {
    lo: usize,
    hi: usize,
    w_lo: T,
    w_hi: T,
}

fn taps<T: Scalar>(input: usize, output: usize) -> Vec<Taps<T>> {
    let ratio = input as f64 / output as f64;
    (0..output)
        .map(|i| {
            let src = ((i as f64 + 0.5) * ratio - 0.5).clamp(0.0, (input - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(input - 1);
            let frac = src - lo as f64;
            Taps {
                lo,
                hi,
                w_lo: T::lit(1.0 - frac),
                w_hi: T::lit(frac),
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub(crate) struct ResizePlan<T> {
    c: usize,
    h: usize,
    w: usize,
    rows: Vec<Taps<T>>,
    cols: Vec<Taps<T>>,
}

impl<T: Scalar> ResizePlan<T> {
    fn new(c: usize, h: usize, w: usize, out_h: usize, out_w: usize) -> Self {
        Self {
            c,
            h,
            w,
            rows: taps(h, out_h),
            cols: taps(w, out_w),
        }
    }

    fn forward(&self, x: &[T]) -> Vec<T> {
        let (oh, ow) = (self.rows.len(), self.cols.len());
        let mut out = Vec::with_capacity(self.c * oh * ow);
        for ch in 0..self.c {
            let p = &x[ch * self.h * self.w..(ch + 1) * self.h * self.w];
            for r in &self.rows {
                let (top, bot) = (&p[r.lo * self.w..], &p[r.hi * self.w..]);
                for q in &self.cols {
                    let upper = q.w_lo * top[q.lo] + q.w_hi * top[q.hi];
                    let lower = q.w_lo * bot[q.lo] + q.w_hi * bot[q.hi];
                    out.push(r.w_lo * upper + r.w_hi * lower);
                }
            }
        }
        out
    }

    pub(crate) fn backward(&self, g: &[T]) -> Vec<T> {
        let (oh, ow) = (self.rows.len(), self.cols.len());
        let mut gx = vec![T::zero(); self.c * self.h * self.w];
        for ch in 0..self.c {
            let p = &mut gx[ch * self.h * self.w..(ch + 1) * self.h * self.w];
            for (i, r) in self.rows.iter().enumerate() {
                for (j, q) in self.cols.iter().enumerate() {
                    let gv = g[(ch * oh + i) * ow + j];
                    p[r.lo * self.w + q.lo] += gv * r.w_lo * q.w_lo;
                    p[r.lo * self.w + q.hi] += gv * r.w_lo * q.w_hi;
                    p[r.hi * self.w + q.lo] += gv * r.w_hi * q.w_lo;
                    p[r.hi * self.w + q.hi] += gv * r.w_hi * q.w_hi;
                }
            }
        }
        gx
    }
}

impl<T: Scalar> Tape<T> {
    pub fn bilinear_resize(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let (c, h, w) = self.value(x).chw()?;
        if out_h == 0 || out_w == 0 {
            return Err(Error::invalid("bilinear_resize", "output extents must be positive"));
        }
        let plan = ResizePlan::new(c, h, w, out_h, out_w);
        let value = Tensor::from_parts(vec![c, out_h, out_w], plan.forward(self.value(x).data()));
        self.push("bilinear_resize", value, Op::Bilinear { x, plan }, &[x])
    }
}

/// Tape-free bilinear resize of a `C×H×W` tensor.
pub fn bilinear_resize<T: Scalar>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let v = tape.constant(x.clone())?;
    let y = tape.bilinear_resize(v, out_h, out_w)?;
    Ok(tape.value(y).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::{grad_check_many, GradCheckOptions};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_field_is_preserved() {
        let x = Tensor::full(vec![2, 3, 5], 0.7f64);
        for (oh, ow) in [(6, 10), (2, 2), (7, 1), (3, 5)] {
            let y = bilinear_resize(&x, oh, ow).unwrap();
            assert!(y.data().iter().all(|&v| (v - 0.7).abs() < 1e-15));
        }
    }

    #[test]
    fn single_pixel_replicates() {
        let x = Tensor::full(vec![1, 1, 1], 4.0f64);
        let y = bilinear_resize(&x, 4, 4).unwrap();
        assert_eq!(y.data(), &[4.0; 16]);
    }

    #[test]
    fn upsampling_linear_ramp_is_exact_in_interior() {
        // Row i carries value i; pixel centers are at i + 0.5.
        let (h, w) = (6, 4);
        let x = Tensor::from_vec(vec![1, h, w], (0..h * w).map(|k| (k / w) as f64).collect()).unwrap();
        let y = bilinear_resize(&x, 2 * h, 2 * w).unwrap();
        for i in 1..2 * h - 1 {
            // Closed form: source coordinate (i + 0.5)/2 − 0.5.
            let want = (i as f64 + 0.5) / 2.0 - 0.5;
            for j in 0..2 * w {
                assert!((y[i * 2 * w + j] - want).abs() < 1e-6, "row {i}");
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for (oh, ow) in [(8, 10), (3, 2)] {
            let inputs = vec![
                ("x".to_string(), Tensor::uniform(vec![2, 4, 5], -1.0, 1.0, &mut rng)),
                ("r".to_string(), Tensor::uniform(vec![2, oh, ow], -1.0, 1.0, &mut rng)),
            ];
            let r = grad_check_many(
                |t, v| {
                    let y = t.bilinear_resize(v[0], oh, ow)?;
                    let y = t.mul(y, v[1])?;
                    t.sum_all(y)
                },
                &inputs,
                GradCheckOptions::exhaustive(1e-5),
            )
            .unwrap();
            assert!(r.max_rel_error < 1e-6, "{r:?}");
        }
    }
}
