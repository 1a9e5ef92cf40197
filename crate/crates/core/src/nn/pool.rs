use crate::error::{Error, Result};
use crate::tensor::{Op, Scalar, Tape, Tensor, Var};

/// Precomputed windows of an adaptive average pooling.
#[derive(Debug, Clone)]
pub(crate) struct PoolPlan {
    c: usize,
    h: usize,
    w: usize,
    rows: Vec<(usize, usize)>,
    cols: Vec<(usize, usize)>,
}

fn windows(input: usize, output: usize) -> Vec<(usize, usize)> {
    (0..output)
        .map(|i| {
            let start = i * input / output;
            let end = ((i + 1) * input).div_ceil(output);
            (start, end)
        })
        .collect()
}

impl PoolPlan {
    fn new(c: usize, h: usize, w: usize, out_h: usize, out_w: usize) -> Self {
        Self {
            c,
            h,
            w,
            rows: windows(h, out_h),
            cols: windows(w, out_w),
        }
    }

    fn forward<T: Scalar>(&self, x: &[T]) -> Vec<T> {
        let (oh, ow) = (self.rows.len(), self.cols.len());
        let mut out = Vec::with_capacity(self.c * oh * ow);
        for ch in 0..self.c {
            let plane = &x[ch * self.h * self.w..(ch + 1) * self.h * self.w];
            for &(r0, r1) in &self.rows {
                for &(c0, c1) in &self.cols {
                    let mut acc = T::zero();
                    for y in r0..r1 {
                        for xx in c0..c1 {
                            acc += plane[y * self.w + xx];
                        }
                    }
                    out.push(acc / T::lit(((r1 - r0) * (c1 - c0)) as f64));
                }
            }
        }
        out
    }

    pub(crate) fn backward<T: Scalar>(&self, g: &[T]) -> Vec<T> {
        let (oh, ow) = (self.rows.len(), self.cols.len());
        let mut gx = vec![T::zero(); self.c * self.h * self.w];
        for ch in 0..self.c {
            let plane = &mut gx[ch * self.h * self.w..(ch + 1) * self.h * self.w];
            for (i, &(r0, r1)) in self.rows.iter().enumerate() {
                for (j, &(c0, c1)) in self.cols.iter().enumerate() {
                    let share = g[(ch * oh + i) * ow + j] / T::lit(((r1 - r0) * (c1 - c0)) as f64);
                    for y in r0..r1 {
                        for xx in c0..c1 {
                            plane[y * self.w + xx] += share;
                        }
                    }
                }
            }
        }
        gx
    }
}

impl<T: Scalar> Tape<T> {
    /// Averages `C×H×W` input over adaptive windows to `C×out_h×out_w`.
    pub fn adaptive_avg_pool(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let (c, h, w) = self.value(x).chw()?;
        if out_h == 0 || out_w == 0 || out_h > h || out_w > w {
            return Err(Error::invalid(
                "adaptive_avg_pool",
                format!("cannot pool {h}x{w} to {out_h}x{out_w}"),
            ));
        }
        let plan = PoolPlan::new(c, h, w, out_h, out_w);
        let value = Tensor::from_parts(vec![c, out_h, out_w], plan.forward(self.value(x).data()));
        self.push("adaptive_avg_pool", value, Op::AdaptiveAvgPool { x, plan }, &[x])
    }

    /// Non-overlapping 2×2 max pooling; ties resolve to the first element in row-major order.
    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = self.value(x).chw()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::invalid("max_pool2", format!("extents {h}x{w} must be even")));
        }
        let (oh, ow) = (h / 2, w / 2);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(c * oh * ow);
        let mut argmax = Vec::with_capacity(c * oh * ow);
        for ch in 0..c {
            let base = ch * h * w;
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = base + 2 * i * w + 2 * j;
                    for idx in [
                        base + 2 * i * w + 2 * j + 1,
                        base + (2 * i + 1) * w + 2 * j,
                        base + (2 * i + 1) * w + 2 * j + 1,
                    ] {
                        if src[idx] > src[best] {
                            best = idx;
                        }
                    }
                    out.push(src[best]);
                    argmax.push(best);
                }
            }
        }
        let value = Tensor::from_parts(vec![c, oh, ow], out);
        self.push("max_pool2", value, Op::MaxPool2 { x, argmax }, &[x])
    }
}

/// Tape-free adaptive average pooling.
pub fn adaptive_avg_pool<T: Scalar>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let v = tape.constant(x.clone())?;
    let y = tape.adaptive_avg_pool(v, out_h, out_w)?;
    Ok(tape.value(y).clone())
}

/// Tape-free 2×2 max pooling.
pub fn max_pool2<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let v = tape.constant(x.clone())?;
    let y = tape.max_pool2(v)?;
    Ok(tape.value(y).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::{grad_check_many, GradCheckOptions};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp(c: usize, h: usize, w: usize) -> Tensor<f64> {
        Tensor::from_vec(vec![c, h, w], (0..c * h * w).map(|v| v as f64).collect()).unwrap()
    }

    #[test]
    fn constant_pools_to_constant() {
        let x = Tensor::full(vec![2, 7, 5], 3.25f64);
        let y = adaptive_avg_pool(&x, 3, 2).unwrap();
        assert!(y.data().iter().all(|&v| (v - 3.25).abs() < 1e-15));
    }

    #[test]
    fn ramp_window_means() {
        let y = adaptive_avg_pool(&ramp(1, 4, 4), 2, 2).unwrap();
        assert_eq!(y.data(), &[2.5, 4.5, 10.5, 12.5]);
    }

    #[test]
    fn eighteen_to_nine_is_two_by_two_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = Tensor::<f64>::uniform(vec![2, 18, 18], -1.0, 1.0, &mut rng);
        let y = adaptive_avg_pool(&x, 9, 9).unwrap();
        for c in 0..2 {
            for i in 0..9 {
                for j in 0..9 {
                    let at = |y: usize, x2: usize| x[(c * 18 + y) * 18 + x2];
                    let want = (at(2 * i, 2 * j) + at(2 * i, 2 * j + 1) + at(2 * i + 1, 2 * j) + at(2 * i + 1, 2 * j + 1)) / 4.0;
                    assert!((y[(c * 9 + i) * 9 + j] - want).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn overlapping_windows_and_oversize_rejected() {
        assert_eq!(windows(5, 3), vec![(0, 2), (1, 4), (3, 5)]);
        assert!(adaptive_avg_pool(&ramp(1, 4, 4), 5, 2).is_err());
    }

    #[test]
    fn pooled_sum_weights_total_output_cells() {
        // sum(pool(x)) is linear in x; its weights are the gradient of that sum.
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf("x", ramp(1, 7, 5).with_requires_grad(true)).unwrap();
        let y = tape.adaptive_avg_pool(x, 3, 2).unwrap();
        let s = tape.sum_all(y).unwrap();
        let g = tape.backward(s).unwrap();
        let total: f64 = g.get("x").unwrap().data().iter().sum();
        assert!((total - 6.0).abs() < 1e-12);
    }

    #[test]
    fn max_pool_examples() {
        let x = Tensor::from_vec(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(max_pool2(&x).unwrap().data(), &[4.0]);
        let c = Tensor::full(vec![1, 4, 6], 2.0f64);
        let y = max_pool2(&c).unwrap();
        assert_eq!(y.shape(), &[1, 2, 3]);
        assert!(y.data().iter().all(|&v| v == 2.0));
        assert!(max_pool2(&Tensor::<f64>::zeros(vec![1, 3, 4])).is_err());
    }

    #[test]
    fn max_pool_routes_one_per_window_first_on_ties() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf("x", Tensor::full(vec![1, 4, 4], 1.0).with_requires_grad(true)).unwrap();
        let y = tape.max_pool2(x).unwrap();
        let s = tape.sum_all(y).unwrap();
        let g = tape.backward(s).unwrap();
        let g = g.get("x").unwrap().data();
        let expected: Vec<f64> = (0..16)
            .map(|i| if (i / 4) % 2 == 0 && (i % 4) % 2 == 0 { 1.0 } else { 0.0 })
            .collect();
        assert_eq!(g, expected.as_slice());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let inputs = vec![
            ("x".to_string(), Tensor::uniform(vec![2, 7, 6], -1.0, 1.0, &mut rng)),
            ("r".to_string(), Tensor::uniform(vec![2, 3, 4], -1.0, 1.0, &mut rng)),
        ];
        let r = grad_check_many(
            |t, v| {
                let y = t.adaptive_avg_pool(v[0], 3, 4)?;
                let y = t.mul(y, v[1])?;
                t.sum_all(y)
            },
            &inputs,
            GradCheckOptions::exhaustive(1e-5),
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");

        let inputs = vec![
            ("x".to_string(), Tensor::uniform(vec![2, 4, 6], -1.0, 1.0, &mut rng)),
            ("r".to_string(), Tensor::uniform(vec![2, 2, 3], -1.0, 1.0, &mut rng)),
        ];
        let r = grad_check_many(
            |t, v| {
                let y = t.max_pool2(v[0])?;
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
