//! Reference implementations written as plain loops, sharing no code with
//! the tape kernels they are compared against.

use crate::data::Point;

/// Dense "same"-padded cross-correlation, one group, `x: C×H×W`,
/// `w: O×C×k×k`, optional bias.
pub fn dense_conv(x: &[f64], c: usize, h: usize, w: usize, weight: &[f64], o: usize, k: usize, dilation: usize, bias: Option<&[f64]>) -> Vec<f64> {
    let pad = dilation * (k - 1) / 2;
    let mut out = vec![0.0; o * h * w];
    for oc in 0..o {
        for i in 0..h {
            for j in 0..w {
                let mut acc = bias.map_or(0.0, |b| b[oc]);
                for ic in 0..c {
                    for a in 0..k {
                        for b in 0..k {
                            let y = i as isize + (a * dilation) as isize - pad as isize;
                            let xx = j as isize + (b * dilation) as isize - pad as isize;
                            if y < 0 || xx < 0 || y >= h as isize || xx >= w as isize {
                                continue;
                            }
                            acc += weight[((oc * c + ic) * k + a) * k + b] * x[(ic * h + y as usize) * w + xx as usize];
                        }
                    }
                }
                out[(oc * h + i) * w + j] = acc;
            }
        }
    }
    out
}

/// Grouped convolution assembled from one dense convolution per group.
#[allow(clippy::too_many_arguments)]
pub fn grouped_conv(
    x: &[f64],
    c: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    o: usize,
    k: usize,
    groups: usize,
    dilation: usize,
    bias: Option<&[f64]>,
) -> Vec<f64> {
    let (cg, og) = (c / groups, o / groups);
    let plane = h * w;
    let wsize = cg * k * k;
    let mut out = Vec::with_capacity(o * plane);
    for g in 0..groups {
        let xs = &x[g * cg * plane..(g + 1) * cg * plane];
        let ws = &weight[g * og * wsize..(g + 1) * og * wsize];
        let bs = bias.map(|b| &b[g * og..(g + 1) * og]);
        out.extend(dense_conv(xs, cg, h, w, ws, og, k, dilation, bs));
    }
    out
}

/// Zero-padded sliding window over a channel vector.
pub fn sliding_conv1d(s: &[f64], kernel: &[f64]) -> Vec<f64> {
    let half = (kernel.len() / 2) as isize;
    (0..s.len() as isize)
        .map(|i| {
            kernel
                .iter()
                .enumerate()
                .map(|(t, &kv)| {
                    let j = i + t as isize - half;
                    if j < 0 || j >= s.len() as isize {
                        0.0
                    } else {
                        kv * s[j as usize]
                    }
                })
                .sum()
        })
        .collect()
}

/// `α_c · sqrt(Σ x² + ε)` per channel.
pub fn context_embedding(x: &[f64], c: usize, plane: usize, alpha: &[f64], epsilon: f64) -> Vec<f64> {
    (0..c)
        .map(|ch| {
            let mut sq = 0.0;
            for i in 0..plane {
                sq += x[ch * plane + i] * x[ch * plane + i];
            }
            alpha[ch] * (sq + epsilon).sqrt()
        })
        .collect()
}

/// Posterior rows by direct evaluation of normalised exponentials.
pub fn posterior(points: &[Point], grid: &[Point], sigma: f64, margin: Option<f64>) -> Vec<Vec<f64>> {
    let two_s2 = 2.0 * sigma * sigma;
    grid.iter()
        .map(|x| {
            if points.is_empty() {
                return vec![1.0];
            }
            let dists: Vec<f64> = points.iter().map(|z| ((x.x - z.x).powi(2) + (x.y - z.y).powi(2)).sqrt()).collect();
            let mut logs: Vec<f64> = Vec::new();
            if let Some(d) = margin {
                let nearest = dists.iter().cloned().fold(f64::INFINITY, f64::min);
                logs.push(-(d - nearest).powi(2) / two_s2);
            }
            logs.extend(dists.iter().map(|r| -r * r / two_s2));
            // shift by the row maximum only to keep exp in range for wide grids
            let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
            let z: f64 = e.iter().sum();
            e.into_iter().map(|v| v / z).collect()
        })
        .collect()
}

/// Expected counts per column, background first when present.
pub fn expected_counts(density: &[f64], rows: &[Vec<f64>]) -> Vec<f64> {
    let k = rows.first().map_or(0, |r| r.len());
    let mut e = vec![0.0; k];
    for (m, row) in rows.iter().enumerate() {
        for (n, p) in row.iter().enumerate() {
            e[n] += p * density[m];
        }
    }
    e
}

pub fn bayesian_loss(density: &[f64], rows: &[Vec<f64>], background: bool) -> f64 {
    expected_counts(density, rows)
        .iter()
        .enumerate()
        .map(|(n, e)| if background && n == 0 { e.abs() } else { (1.0 - e).abs() })
        .sum()
}

/// `(MAE, RMSE)` of predicted against actual counts.
pub fn mae_rmse(predicted: &[f64], actual: &[f64]) -> (f64, f64) {
    let k = predicted.len() as f64;
    let mut abs = 0.0;
    let mut sq = 0.0;
    for (p, a) in predicted.iter().zip(actual) {
        abs += (p - a).abs();
        sq += (p - a) * (p - a);
    }
    (abs / k, (sq / k).sqrt())
}

/// MAE of always predicting the mean of `actual`.
pub fn constant_mean_mae(actual: &[f64]) -> f64 {
    let mean = actual.iter().sum::<f64>() / actual.len() as f64;
    actual.iter().map(|a| (a - mean).abs()).sum::<f64>() / actual.len() as f64
}
