//! Direct grouped 2-D convolution and the channel-axis 1-D convolution.
//!
//! Both are cross-correlations (no kernel flip) with "same" zero padding.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Op, Scalar, Tape, Tensor, Var};

/// Structural description of a grouped convolution layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub groups: usize,
    pub dilation: usize,
    pub bias: bool,
}

impl Conv2dSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            groups: 1,
            dilation: 1,
            bias: true,
        }
    }

    pub fn groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn dilation(mut self, dilation: usize) -> Self {
        self.dilation = dilation;
        self
    }

    pub fn bias(mut self, bias: bool) -> Self {
        self.bias = bias;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::invalid("conv2d", msg));
        if self.in_channels == 0 || self.out_channels == 0 || self.groups == 0 || self.dilation == 0 {
            return fail(format!("counts must be positive: {self:?}"));
        }
        if self.kernel % 2 == 0 {
            return fail(format!("kernel must be odd, got {}", self.kernel));
        }
        if self.in_channels % self.groups != 0 || self.out_channels % self.groups != 0 {
            return fail(format!(
                "groups {} must divide in {} and out {} channels",
                self.groups, self.in_channels, self.out_channels
            ));
        }
        Ok(())
    }

    pub fn padding(&self) -> usize {
        (self.kernel - 1) * self.dilation / 2
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        vec![
            self.out_channels,
            self.in_channels / self.groups,
            self.kernel,
            self.kernel,
        ]
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels / self.groups * self.kernel * self.kernel
    }

    pub fn param_count(&self) -> usize {
        self.out_channels * self.fan_in() + if self.bias { self.out_channels } else { 0 }
    }
}

/// Resolved extents for one convolution call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dGeometry {
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub groups: usize,
    pub dilation: usize,
}

impl Conv2dGeometry {
    fn cin_g(&self) -> usize {
        self.c_in / self.groups
    }

    fn cout_g(&self) -> usize {
        self.c_out / self.groups
    }

    fn pad(&self) -> isize {
        ((self.k - 1) * self.dilation / 2) as isize
    }

    /// Offset of tap `t` relative to the output position.
    #[inline]
    fn tap(&self, t: usize) -> isize {
        (t * self.dilation) as isize - self.pad()
    }
}

/// Output positions `o` in `0..n` for which `o + d` stays inside `0..n`.
#[inline]
fn valid(n: usize, d: isize) -> std::ops::Range<usize> {
    let lo = (-d).max(0) as usize;
    let hi = (n as isize - d).clamp(0, n as isize) as usize;
    lo.min(hi)..hi
}

pub(crate) fn conv2d_forward<T: Scalar>(x: &[T], weight: &[T], bias: Option<&[T]>, g: &Conv2dGeometry) -> Vec<T> {
    let plane = g.h * g.w;
    let (cin_g, cout_g, k) = (g.cin_g(), g.cout_g(), g.k);
    let mut out = vec![T::zero(); g.c_out * plane];
    out.par_chunks_mut(plane).enumerate().for_each(|(oc, dst)| {
        if let Some(b) = bias {
            dst.fill(b[oc]);
        }
        let group = oc / cout_g;
        for icl in 0..cin_g {
            let ic = group * cin_g + icl;
            let src = &x[ic * plane..(ic + 1) * plane];
            let wbase = (oc * cin_g + icl) * k * k;
            for ky in 0..k {
                let dy = g.tap(ky);
                let rows = valid(g.h, dy);
                for kx in 0..k {
                    let wv = weight[wbase + ky * k + kx];
                    if wv == T::zero() {
                        continue;
                    }
                    let dx = g.tap(kx);
                    let cols = valid(g.w, dx);
                    if cols.is_empty() {
                        continue;
                    }
                    for oy in rows.clone() {
                        let iy = (oy as isize + dy) as usize;
                        let s0 = (iy * g.w) as isize + dx;
                        let srow = &src[(s0 + cols.start as isize) as usize..(s0 + cols.end as isize) as usize];
                        let drow = &mut dst[oy * g.w + cols.start..oy * g.w + cols.end];
                        for (d, &s) in drow.iter_mut().zip(srow) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    });
    out
}

pub(crate) fn conv2d_backward_input<T: Scalar>(gout: &[T], weight: &[T], g: &Conv2dGeometry) -> Vec<T> {
    let plane = g.h * g.w;
    let (cin_g, cout_g, k) = (g.cin_g(), g.cout_g(), g.k);
    let mut gin = vec![T::zero(); g.c_in * plane];
    gin.par_chunks_mut(plane).enumerate().for_each(|(ic, dst)| {
        let group = ic / cin_g;
        let icl = ic % cin_g;
        for ocl in 0..cout_g {
            let oc = group * cout_g + ocl;
            let src = &gout[oc * plane..(oc + 1) * plane];
            let wbase = (oc * cin_g + icl) * k * k;
            for ky in 0..k {
                let dy = g.tap(ky);
                let rows = valid(g.h, dy);
                for kx in 0..k {
                    let wv = weight[wbase + ky * k + kx];
                    let dx = g.tap(kx);
                    let cols = valid(g.w, dx);
                    if cols.is_empty() {
                        continue;
                    }
                    // gin[oy+dy][ox+dx] += w * gout[oy][ox]
                    for oy in rows.clone() {
                        let iy = (oy as isize + dy) as usize;
                        let d0 = (iy * g.w) as isize + dx;
                        let drow = &mut dst[(d0 + cols.start as isize) as usize..(d0 + cols.end as isize) as usize];
                        let srow = &src[oy * g.w + cols.start..oy * g.w + cols.end];
                        for (d, &s) in drow.iter_mut().zip(srow) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    });
    gin
}

pub(crate) fn conv2d_backward_weight<T: Scalar>(gout: &[T], x: &[T], g: &Conv2dGeometry) -> Vec<T> {
    let plane = g.h * g.w;
    let (cin_g, cout_g, k) = (g.cin_g(), g.cout_g(), g.k);
    let per_out = cin_g * k * k;
    let mut gw = vec![T::zero(); g.c_out * per_out];
    gw.par_chunks_mut(per_out).enumerate().for_each(|(oc, dst)| {
        let group = oc / cout_g;
        let go = &gout[oc * plane..(oc + 1) * plane];
        for icl in 0..cin_g {
            let ic = group * cin_g + icl;
            let src = &x[ic * plane..(ic + 1) * plane];
            for ky in 0..k {
                let dy = g.tap(ky);
                let rows = valid(g.h, dy);
                for kx in 0..k {
                    let dx = g.tap(kx);
                    let cols = valid(g.w, dx);
                    let mut acc = T::zero();
                    if !cols.is_empty() {
                        for oy in rows.clone() {
                            let iy = (oy as isize + dy) as usize;
                            let s0 = (iy * g.w) as isize + dx;
                            let srow = &src[(s0 + cols.start as isize) as usize..(s0 + cols.end as isize) as usize];
                            let grow = &go[oy * g.w + cols.start..oy * g.w + cols.end];
                            for (&a, &b) in grow.iter().zip(srow) {
                                acc += a * b;
                            }
                        }
                    }
                    dst[(icl * k + ky) * k + kx] = acc;
                }
            }
        }
    });
    gw
}

pub(crate) fn channel_sums<T: Scalar>(g: &[T], channels: usize) -> Vec<T> {
    let plane = g.len() / channels;
    g.chunks(plane).map(|c| c.iter().copied().sum()).collect()
}

fn geometry(x_shape: &[usize], w_shape: &[usize], spec: &Conv2dSpec) -> Result<Conv2dGeometry> {
    spec.validate()?;
    let (c, h, w) = match *x_shape {
        [c, h, w] => (c, h, w),
        _ => {
            return Err(Error::invalid(
                "conv2d",
                format!("expected C×H×W input, got {x_shape:?}"),
            ))
        }
    };
    if c != spec.in_channels {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            lhs: x_shape.to_vec(),
            rhs: spec.weight_shape(),
        });
    }
    if w_shape != spec.weight_shape().as_slice() {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            lhs: w_shape.to_vec(),
            rhs: spec.weight_shape(),
        });
    }
    Ok(Conv2dGeometry {
        c_in: c,
        c_out: spec.out_channels,
        h,
        w,
        k: spec.kernel,
        groups: spec.groups,
        dilation: spec.dilation,
    })
}

impl<T: Scalar> Tape<T> {
    /// Grouped "same" convolution of a `C_in×H×W` input.
    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Option<Var>, spec: &Conv2dSpec) -> Result<Var> {
        let geom = geometry(self.shape(x), self.shape(weight), spec)?;
        if let Some(b) = bias {
            if self.shape(b) != [spec.out_channels] {
                return Err(Error::ShapeMismatch {
                    op: "conv2d",
                    lhs: self.shape(b).to_vec(),
                    rhs: vec![spec.out_channels],
                });
            }
        }
        let out = conv2d_forward(
            self.value(x).data(),
            self.value(weight).data(),
            bias.map(|b| self.value(b).data()),
            &geom,
        );
        let value = Tensor::from_parts(vec![geom.c_out, geom.h, geom.w], out);
        let mut inputs = vec![x, weight];
        inputs.extend(bias);
        self.push(
            "conv2d",
            value,
            Op::Conv2d {
                x,
                weight,
                bias,
                geom,
            },
            &inputs,
        )
    }

    /// 1-D convolution along a length-C vector with zero padding `(k−1)/2` at both ends.
    pub fn conv1d_channel(&mut self, s: Var, kernel: Var) -> Result<Var> {
        let k = self.value(kernel).len();
        if k % 2 == 0 {
            return Err(Error::invalid("conv1d_channel", format!("kernel length must be odd, got {k}")));
        }
        if self.shape(s).len() != 1 {
            return Err(Error::invalid(
                "conv1d_channel",
                format!("expected a vector, got {:?}", self.shape(s)),
            ));
        }
        let out = conv1d_forward(self.value(s).data(), self.value(kernel).data());
        let value = Tensor::from_parts(vec![out.len()], out);
        self.push("conv1d_channel", value, Op::Conv1dChannel { s, kernel }, &[s, kernel])
    }
}

/// Tape-free grouped convolution.
pub fn conv2d<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, bias: Option<&Tensor<T>>, spec: &Conv2dSpec) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone())?;
    let wv = tape.constant(weight.clone())?;
    let bv = bias.map(|b| tape.constant(b.clone())).transpose()?;
    let y = tape.conv2d(xv, wv, bv, spec)?;
    Ok(tape.value(y).clone())
}

/// Tape-free channel convolution.
pub fn conv1d_channel<T: Scalar>(s: &[T], kernel: &[T]) -> Result<Vec<T>> {
    if kernel.len() % 2 == 0 {
        return Err(Error::invalid(
            "conv1d_channel",
            format!("kernel length must be odd, got {}", kernel.len()),
        ));
    }
    Ok(conv1d_forward(s, kernel))
}

fn conv1d_forward<T: Scalar>(s: &[T], kernel: &[T]) -> Vec<T> {
    let (c, k) = (s.len() as isize, kernel.len());
    let pad = (k / 2) as isize;
    (0..c)
        .map(|i| {
            let mut acc = T::zero();
            for (t, &kv) in kernel.iter().enumerate() {
                let j = i + t as isize - pad;
                if (0..c).contains(&j) {
                    acc += kv * s[j as usize];
                }
            }
            acc
        })
        .collect()
}

pub(crate) fn conv1d_backward_input<T: Scalar>(g: &[T], kernel: &[T]) -> Vec<T> {
    let c = g.len() as isize;
    let pad = (kernel.len() / 2) as isize;
    let mut gs = vec![T::zero(); g.len()];
    for i in 0..c {
        for (t, &kv) in kernel.iter().enumerate() {
            let j = i + t as isize - pad;
            if (0..c).contains(&j) {
                gs[j as usize] += kv * g[i as usize];
            }
        }
    }
    gs
}

pub(crate) fn conv1d_backward_kernel<T: Scalar>(g: &[T], s: &[T], k: usize) -> Vec<T> {
    let c = g.len() as isize;
    let pad = (k / 2) as isize;
    (0..k)
        .map(|t| {
            let mut acc = T::zero();
            for i in 0..c {
                let j = i + t as isize - pad;
                if (0..c).contains(&j) {
                    acc += g[i as usize] * s[j as usize];
                }
            }
            acc
        })
        .collect()
}
