//! End-to-end network: backbone → ×2 bilinear → PSM → GCM → regression head → |·|.

use super::{
    backbone_forward, declare_conv, gcm_forward, psm_forward, scaled_channels, BackboneConfig, Forward, GcmConfig,
    Mode, PsmConfig,
};
use crate::data::Point;
use crate::error::Result;
use crate::nn::Conv2dSpec;
use crate::params::{Initializer, ModelParams};
use crate::nn::BnStats;
use crate::tensor::{Scalar, Tape, Tensor, Var};

pub type BnStatsList<T> = Vec<(String, BnStats<T>)>;

/// Input pixels per density cell along each axis.
pub const OUTPUT_STRIDE: usize = 8;

const HEAD_OUTPUT_INIT_SCALE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct PscnetConfig {
    pub width_scale: f64,
    pub backbone: BackboneConfig,
    pub psm: PsmConfig,
    pub gcm: GcmConfig,
    /// When false the GCM is skipped entirely (ablation).
    pub use_gcm: bool,
    /// Widths of the two 3×3 head convolutions.
    pub head: [usize; 2],
}

impl PscnetConfig {
    pub fn new(width_scale: f64) -> Self {
        let backbone = BackboneConfig::new(width_scale);
        let width = scaled_channels(512, width_scale);
        let psm = PsmConfig::new(backbone.out_channels(), width);
        let gcm = GcmConfig::new(psm.out_channels());
        Self {
            width_scale,
            backbone,
            psm,
            gcm,
            use_gcm: true,
            head: [scaled_channels(256, width_scale), scaled_channels(128, width_scale)],
        }
    }

    /// Width 1/8, the desk-scale configuration.
    pub fn toy() -> Self {
        Self::new(0.125)
    }

    pub fn head_specs(&self) -> [Conv2dSpec; 3] {
        [
            Conv2dSpec::new(self.psm.out_channels(), self.head[0], 3),
            Conv2dSpec::new(self.head[0], self.head[1], 3),
            Conv2dSpec::new(self.head[1], 1, 1),
        ]
    }
}

#[derive(Debug, Clone)]
pub struct Pscnet {
    pub config: PscnetConfig,
}

impl Pscnet {
    pub fn new(config: PscnetConfig) -> Self {
        Self { config }
    }

    /// Fresh parameters. GCM tensors are declared even when the GCM is
    /// disabled so checkpoints stay interchangeable.
    pub fn init_params<T: Scalar>(&self, seed: u64) -> Result<ModelParams<T>> {
        let mut init = Initializer::new(seed);
        let mut params = ModelParams::new();
        self.config.backbone.declare(&mut params, &mut init)?;
        self.config.psm.declare(&mut params, &mut init)?;
        self.config.gcm.declare(&mut params, &mut init)?;
        for (i, spec) in self.config.head_specs().iter().enumerate() {
            declare_conv(&mut params, &mut init, &format!("head.conv{}", i + 1), spec)?;
        }
        // A small output layer keeps the initial count near the annotation
        // scale instead of hundreds of people per crop.
        let w = params.get_mut("head.conv3.weight")?;
        let scale = T::lit(HEAD_OUTPUT_INIT_SCALE);
        for v in w.data_mut() {
            *v = *v * scale;
        }
        Ok(params)
    }

    /// `3×H×W` image → `1×(H/8)×(W/8)` nonnegative density.
    pub fn forward<T: Scalar>(&self, f: &mut Forward<'_, T>, image: Var) -> Result<Var> {
        let c = &self.config;
        let feat = backbone_forward(f, &c.backbone, image)?;
        let (_, h, w) = f.tape().value(feat).chw()?;
        let up = f.tape().bilinear_resize(feat, 2 * h, 2 * w)?;
        let mut x = psm_forward(f, &c.psm, up)?;
        if c.use_gcm {
            x = gcm_forward(f, &c.gcm, x)?;
        }
        let [h1, h2, h3] = c.head_specs();
        let y = f.conv("head.conv1", x, &h1)?;
        let y = f.tape().relu(y)?;
        let y = f.conv("head.conv2", y, &h2)?;
        let y = f.tape().relu(y)?;
        let y = f.conv("head.conv3", y, &h3)?;
        f.tape().abs(y)
    }

    /// Inference without gradient bookkeeping beyond a throwaway tape.
    pub fn predict<T: Scalar>(&self, params: &ModelParams<T>, image: &Tensor<T>) -> Result<Tensor<T>> {
        let frozen = frozen(params);
        let mut tape = Tape::new();
        let mut f = Forward::new(&mut tape, &frozen, Mode::Eval)?;
        let x = f.tape().constant(image.clone())?;
        let d = self.forward(&mut f, x)?;
        Ok(f.tape().value(d).clone())
    }

    /// Train-mode forward returning the density and batch statistics.
    pub fn forward_train<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        params: &ModelParams<T>,
        image: &Tensor<T>,
    ) -> Result<(Var, BnStatsList<T>)> {
        let mut f = Forward::new(tape, params, Mode::Train)?;
        let x = f.tape().constant(image.clone())?;
        let d = self.forward(&mut f, x)?;
        Ok((d, f.into_stats()))
    }
}

fn frozen<T: Scalar>(params: &ModelParams<T>) -> ModelParams<T> {
    let mut p = params.clone();
    for (_, t) in p.iter_mut() {
        t.set_requires_grad(false);
    }
    p
}

/// Sum over all density cells in row-major order.
pub fn predicted_count<T: Scalar>(density: &Tensor<T>) -> T {
    density.sum()
}

/// An image zero-padded on the right and bottom to a multiple of 16.
#[derive(Debug, Clone)]
pub struct Padded {
    pub image: Tensor<f32>,
    pub points: Vec<Point>,
    pub height: usize,
    pub width: usize,
}

impl Padded {
    /// Density cells covering the original extent.
    pub fn density_extent(&self) -> (usize, usize) {
        (self.height.div_ceil(OUTPUT_STRIDE), self.width.div_ceil(OUTPUT_STRIDE))
    }

    /// Splits a density map into the part over the original image and the
    /// mass that fell entirely inside the pad band.
    pub fn crop_density(&self, density: &Tensor<f32>) -> Result<(Tensor<f32>, f32)> {
        let (_, dh, dw) = density.chw()?;
        let (ch, cw) = self.density_extent();
        let mut kept = Vec::with_capacity(ch * cw);
        let mut pad_mass = 0.0f32;
        for i in 0..dh {
            for j in 0..dw {
                let v = density.data()[i * dw + j];
                if i < ch && j < cw {
                    kept.push(v);
                } else {
                    pad_mass += v;
                }
            }
        }
        Ok((Tensor::from_vec(vec![1, ch, cw], kept)?, pad_mass))
    }
}

pub fn pad_to_stride(image: &Tensor<f32>, points: &[Point]) -> Result<Padded> {
    let (c, h, w) = image.chw()?;
    let (ph, pw) = (h.next_multiple_of(16), w.next_multiple_of(16));
    let image = if (ph, pw) == (h, w) {
        image.clone()
    } else {
        let mut data = vec![0.0f32; c * ph * pw];
        for ch in 0..c {
            for y in 0..h {
                let src = &image.data()[(ch * h + y) * w..(ch * h + y + 1) * w];
                data[(ch * ph + y) * pw..(ch * ph + y) * pw + w].copy_from_slice(src);
            }
        }
        Tensor::from_vec(vec![c, ph, pw], data)?
    };
    Ok(Padded {
        image,
        points: points.to_vec(),
        height: h,
        width: w,
    })
}
