//! Truncated VGG19 feature extractor: 16 conv+ReLU layers, four 2×2 poolings,
//! output stride 16, no classifier.

use std::path::Path;

use super::{declare_conv, scaled_channels, Forward};
use crate::checkpoint;
use crate::error::{Error, Result};
use crate::nn::Conv2dSpec;
use crate::params::{Initializer, ModelParams};
use crate::tensor::{Scalar, Var};

/// (conv count, base channels) per block.
pub const VGG19_BLOCKS: [(usize, usize); 5] = [(2, 64), (2, 128), (4, 256), (4, 512), (4, 512)];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackboneConfig {
    pub width_scale: f64,
}

impl BackboneConfig {
    pub fn new(width_scale: f64) -> Self {
        Self { width_scale }
    }

    pub fn block_channels(&self) -> [usize; 5] {
        VGG19_BLOCKS.map(|(_, base)| scaled_channels(base, self.width_scale))
    }

    pub fn out_channels(&self) -> usize {
        self.block_channels()[4]
    }

    /// `(name, spec)` for every convolution in execution order.
    pub fn layers(&self) -> Vec<(String, Conv2dSpec)> {
        let channels = self.block_channels();
        let mut layers = Vec::with_capacity(16);
        let mut c_in = 3;
        for (b, &(count, _)) in VGG19_BLOCKS.iter().enumerate() {
            for i in 0..count {
                let spec = Conv2dSpec::new(c_in, channels[b], 3);
                layers.push((format!("backbone.conv{}_{}", b + 1, i + 1), spec));
                c_in = channels[b];
            }
        }
        layers
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|(_, s)| s.param_count()).sum()
    }

    pub fn declare<T: Scalar>(&self, params: &mut ModelParams<T>, init: &mut Initializer) -> Result<()> {
        for (name, spec) in self.layers() {
            declare_conv(params, init, &name, &spec)?;
        }
        Ok(())
    }
}

/// Maps a `3×H×W` image to `C×(H/16)×(W/16)` features.
pub fn backbone_forward<T: Scalar>(f: &mut Forward<'_, T>, config: &BackboneConfig, image: Var) -> Result<Var> {
    let (c, h, w) = f.tape().value(image).chw()?;
    if c != 3 {
        return Err(Error::invalid("backbone", format!("expected 3 channels, got {c}")));
    }
    if h % 16 != 0 || w % 16 != 0 {
        return Err(Error::NotStrideAligned {
            height: h,
            width: w,
            pad_h: h.next_multiple_of(16) - h,
            pad_w: w.next_multiple_of(16) - w,
        });
    }
    let layers = config.layers();
    let mut x = image;
    let mut k = 0;
    for (b, &(count, _)) in VGG19_BLOCKS.iter().enumerate() {
        for _ in 0..count {
            let (name, spec) = &layers[k];
            x = f.conv(name, x, spec)?;
            x = f.tape().relu(x)?;
            k += 1;
        }
        if b < 4 {
            x = f.tape().max_pool2(x)?;
        }
    }
    Ok(x)
}

/// Replaces backbone weights in `params` with those stored in a checkpoint.
///
/// Tensors are matched by name, so record order in the file is irrelevant.
pub fn load_external_weights(params: &mut ModelParams<f32>, path: &Path) -> Result<()> {
    let loaded = checkpoint::read(path)?;
    let mut backbone = ModelParams::new();
    for (name, t) in loaded.iter().filter(|(n, _)| n.starts_with("backbone.")) {
        backbone.insert(name, t.clone())?;
    }
    if backbone.is_empty() {
        return Err(Error::Format(format!("{}: no backbone tensors", path.display())));
    }
    params.load_from(&backbone)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Mode;
    use crate::tensor::{Tape, Tensor};

    fn run(config: BackboneConfig, shape: Vec<usize>) -> Result<Tensor<f32>> {
        let mut params = ModelParams::<f32>::new();
        config.declare(&mut params, &mut Initializer::new(1)).unwrap();
        let mut tape = Tape::new();
        let mut f = Forward::new(&mut tape, &params, Mode::Eval)?;
        let x = f.tape().constant(Tensor::full(shape, 0.5))?;
        let y = backbone_forward(&mut f, &config, x)?;
        Ok(f.tape().value(y).clone())
    }

    #[test]
    fn toy_width_shape() {
        let y = run(BackboneConfig::new(0.125), vec![3, 64, 64]).unwrap();
        assert_eq!(y.shape(), &[64, 4, 4]);
    }

    #[test]
    fn misaligned_input_reports_padding() {
        let err = run(BackboneConfig::new(0.125), vec![3, 50, 64]).unwrap_err();
        assert!(matches!(err, Error::NotStrideAligned { pad_h: 14, pad_w: 0, .. }), "{err}");
    }

    #[test]
    fn layout_has_sixteen_layers() {
        let config = BackboneConfig::new(1.0);
        let layers = config.layers();
        assert_eq!(layers.len(), 16);
        assert_eq!(layers[0].1.in_channels, 3);
        assert_eq!(layers[15].1.out_channels, 512);
        assert_eq!(config.block_channels(), [64, 128, 256, 512, 512]);
        // Plain VGG19 feature-extractor size (no classifier).
        assert_eq!(config.param_count(), 20_024_384);
    }

    #[test]
    fn doubling_width_roughly_quadruples_parameters() {
        let count = |ws: f64| -> usize {
            BackboneConfig::new(ws)
                .layers()
                .iter()
                .map(|(_, s)| s.out_channels * s.fan_in())
                .sum()
        };
        let exact = |ws: f64| -> usize {
            let ch = BackboneConfig::new(ws).block_channels();
            let mut total = 0;
            let mut c_in = 3;
            for (b, &(n, _)) in VGG19_BLOCKS.iter().enumerate() {
                for _ in 0..n {
                    total += ch[b] * c_in * 9;
                    c_in = ch[b];
                }
            }
            total
        };
        assert_eq!(count(0.25), exact(0.25));
        let ratio = count(0.5) as f64 / count(0.25) as f64;
        assert!((ratio - 4.0).abs() < 0.05, "{ratio}");
    }
}
