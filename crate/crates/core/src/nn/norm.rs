//! Per-channel batch normalization for single-image batches.
//!
//! With one image per batch the batch statistics are the spatial
//! statistics of each channel.

use crate::error::{Error, Result};
use crate::tensor::{Op, Scalar, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchNorm {
    pub channels: usize,
    pub epsilon: f64,
    pub momentum: f64,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            epsilon: 1e-5,
            momentum: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum BnMode<'a, T> {
    /// Normalize with statistics of the current input.
    Train,
    /// Normalize with stored running statistics.
    Eval {
        running_mean: &'a [T],
        running_var: &'a [T],
    },
}

/// Statistics observed in a train-mode pass; `var` is the unbiased estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct BnStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> BnStats<T> {
    /// `running ← (1 − momentum)·running + momentum·observed`
    pub fn update_running(&self, running_mean: &mut [T], running_var: &mut [T], momentum: f64) {
        let m = T::lit(momentum);
        let keep = T::one() - m;
        for (r, &o) in running_mean.iter_mut().zip(&self.mean) {
            *r = keep * *r + m * o;
        }
        for (r, &o) in running_var.iter_mut().zip(&self.var) {
            *r = keep * *r + m * o;
        }
    }
}

pub(crate) struct BnBackward<T> {
    pub input: Vec<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

pub(crate) fn batch_norm_train_backward<T: Scalar>(g: &[T], xhat: &[T], inv_std: &[T], gamma: &[T]) -> BnBackward<T> {
    let c = gamma.len();
    let plane = g.len() / c;
    let n = T::lit(plane as f64);
    let mut input = vec![T::zero(); g.len()];
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for ch in 0..c {
        let range = ch * plane..(ch + 1) * plane;
        let (gc, xc) = (&g[range.clone()], &xhat[range.clone()]);
        let mut sum_g = T::zero();
        let mut sum_gx = T::zero();
        for (&gi, &xi) in gc.iter().zip(xc) {
            sum_g += gi;
            sum_gx += gi * xi;
        }
        dgamma[ch] = sum_gx;
        dbeta[ch] = sum_g;
        let scale = gamma[ch] * inv_std[ch] / n;
        for ((d, &gi), &xi) in input[range].iter_mut().zip(gc).zip(xc) {
            *d = scale * (n * gi - sum_g - xi * sum_gx);
        }
    }
    BnBackward {
        input,
        gamma: dgamma,
        beta: dbeta,
    }
}

pub(crate) fn batch_norm_eval_backward<T: Scalar>(g: &[T], xhat: &[T], inv_std: &[T], gamma: &[T]) -> BnBackward<T> {
    let c = gamma.len();
    let plane = g.len() / c;
    let mut input = vec![T::zero(); g.len()];
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for ch in 0..c {
        let range = ch * plane..(ch + 1) * plane;
        let scale = gamma[ch] * inv_std[ch];
        for ((d, &gi), &xi) in input[range.clone()].iter_mut().zip(&g[range.clone()]).zip(&xhat[range]) {
            *d = gi * scale;
            dgamma[ch] += gi * xi;
            dbeta[ch] += gi;
        }
    }
    BnBackward {
        input,
        gamma: dgamma,
        beta: dbeta,
    }
}

impl<T: Scalar> Tape<T> {
    pub fn batch_norm2d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        bn: &BatchNorm,
        mode: BnMode<'_, T>,
    ) -> Result<(Var, Option<BnStats<T>>)> {
        let (c, h, w) = self.value(x).chw()?;
        if c != bn.channels || self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::ShapeMismatch {
                op: "batch_norm2d",
                lhs: self.shape(x).to_vec(),
                rhs: vec![bn.channels],
            });
        }
        let plane = h * w;
        let eps = T::lit(bn.epsilon);
        let xs = self.value(x).data();
        let (gam, bet) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![T::zero(); xs.len()];
        let mut inv_std = vec![T::zero(); c];
        let mut stats = BnStats {
            mean: vec![T::zero(); c],
            var: vec![T::zero(); c],
        };
        for ch in 0..c {
            let src = &xs[ch * plane..(ch + 1) * plane];
            let (mean, var) = match mode {
                BnMode::Train => {
                    let n = T::lit(plane as f64);
                    let mean = src.iter().copied().sum::<T>() / n;
                    let mut ss = T::zero();
                    for &v in src {
                        ss += (v - mean) * (v - mean);
                    }
                    stats.mean[ch] = mean;
                    stats.var[ch] = if plane > 1 { ss / T::lit((plane - 1) as f64) } else { T::zero() };
                    (mean, ss / n)
                }
                BnMode::Eval {
                    running_mean,
                    running_var,
                } => (running_mean[ch], running_var[ch]),
            };
            if var < T::zero() {
                return Err(Error::invalid("batch_norm2d", format!("negative variance in channel {ch}")));
            }
            let inv = T::one() / (var + eps).sqrt();
            inv_std[ch] = inv;
            for (d, &v) in xhat[ch * plane..(ch + 1) * plane].iter_mut().zip(src) {
                *d = (v - mean) * inv;
            }
        }
        let out: Vec<T> = xhat
            .iter()
            .enumerate()
            .map(|(i, &v)| gam[i / plane] * v + bet[i / plane])
            .collect();
        let value = Tensor::from_parts(vec![c, h, w], out);
        let (op, stats) = match mode {
            BnMode::Train => (
                Op::BatchNormTrain {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                },
                Some(stats),
            ),
            BnMode::Eval { .. } => (
                Op::BatchNormEval {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                },
                None,
            ),
        };
        let y = self.push("batch_norm2d", value, op, &[x, gamma, beta])?;
        Ok((y, stats))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::{grad_check_many, GradCheckOptions};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn run(x: Tensor<f64>, gamma: f64, beta: f64, mode: BnMode<'_, f64>) -> (Tensor<f64>, Option<BnStats<f64>>) {
        let c = x.shape()[0];
        let mut tape = Tape::new();
        let xv = tape.constant(x).unwrap();
        let g = tape.constant(Tensor::full(vec![c], gamma)).unwrap();
        let b = tape.constant(Tensor::full(vec![c], beta)).unwrap();
        let (y, s) = tape.batch_norm2d(xv, g, b, &BatchNorm::new(c), mode).unwrap();
        (tape.value(y).clone(), s)
    }

    #[test]
    fn constant_channel_normalizes_to_zero() {
        let (y, _) = run(Tensor::full(vec![2, 3, 3], 7.5), 1.0, 0.0, BnMode::Train);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_gamma_gives_beta() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::uniform(vec![3, 4, 4], -3.0, 3.0, &mut rng);
        let (y, _) = run(x.clone(), 0.0, 5.0, BnMode::Train);
        assert!(y.data().iter().all(|&v| v == 5.0));
        let (m, v) = (vec![0.3; 3], vec![2.0; 3]);
        let (y, _) = run(
            x,
            0.0,
            5.0,
            BnMode::Eval {
                running_mean: &m,
                running_var: &v,
            },
        );
        assert!(y.data().iter().all(|&v| v == 5.0));
    }

    #[test]
    fn train_output_is_standardized() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::uniform(vec![4, 8, 8], -2.0, 5.0, &mut rng);
        let (y, stats) = run(x, 1.0, 0.0, BnMode::Train);
        for ch in y.data().chunks(64) {
            let mean = ch.iter().sum::<f64>() / 64.0;
            let var = ch.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 64.0;
            assert!(mean.abs() < 1e-5);
            assert!((var - 1.0).abs() < 1e-3);
        }
        assert!(stats.unwrap().var.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn eval_uses_initial_buffers() {
        let x = Tensor::from_vec(vec![1, 1, 2], vec![1.0, -2.0]).unwrap();
        let (m, v) = (vec![0.0], vec![1.0]);
        let (y, stats) = run(
            x,
            1.0,
            0.0,
            BnMode::Eval {
                running_mean: &m,
                running_var: &v,
            },
        );
        assert!(stats.is_none());
        let s = 1.0 / (1.0f64 + 1e-5).sqrt();
        assert_eq!(y.data(), &[s, -2.0 * s]);
    }

    #[test]
    fn running_update() {
        let stats = BnStats {
            mean: vec![1.0],
            var: vec![3.0],
        };
        let (mut m, mut v) = (vec![0.0f64], vec![1.0f64]);
        stats.update_running(&mut m, &mut v, 0.1);
        assert!((m[0] - 0.1).abs() < 1e-15);
        assert!((v[0] - 1.2).abs() < 1e-15);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let inputs = vec![
            ("x".to_string(), Tensor::uniform(vec![3, 4, 5], -1.0, 1.0, &mut rng)),
            ("g".to_string(), Tensor::uniform(vec![3], -1.0, 1.0, &mut rng)),
            ("b".to_string(), Tensor::uniform(vec![3], -1.0, 1.0, &mut rng)),
            ("r".to_string(), Tensor::uniform(vec![3, 4, 5], -1.0, 1.0, &mut rng)),
        ];
        let bn = BatchNorm::new(3);
        let mean = [0.1, -0.2, 0.3];
        let var = [0.5, 1.5, 2.0];
        for eval in [false, true] {
            let r = grad_check_many(
                |t, v| {
                    let mode = if eval {
                        BnMode::Eval {
                            running_mean: &mean,
                            running_var: &var,
                        }
                    } else {
                        BnMode::Train
                    };
                    let (y, _) = t.batch_norm2d(v[0], v[1], v[2], &bn, mode)?;
                    let y = t.mul(y, v[3])?;
                    t.sum_all(y)
                },
                &inputs,
                GradCheckOptions::exhaustive(1e-5),
            )
            .unwrap();
            assert!(r.max_rel_error < 1e-6, "eval={eval}: {r:?}");
        }
    }
}
