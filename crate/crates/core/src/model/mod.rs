//! Network assembly: backbone, pyramidal scale module, global context gate, head.

pub mod backbone;
pub mod gcm;
pub mod pscnet;
pub mod psm;

pub use backbone::{backbone_forward, BackboneConfig};
pub use gcm::{gcm_embed, gcm_forward, gcm_gate_apply, gcm_transform, GateForm, GcmConfig, NormScale};
pub use pscnet::{pad_to_stride, predicted_count, BnStatsList, Padded, Pscnet, PscnetConfig, OUTPUT_STRIDE};
pub use psm::{global_pyconv, local_pyconv, psm_forward, PsmConfig};

use crate::error::Result;
use crate::nn::{BatchNorm, BnMode, BnStats, Conv2dSpec};
use crate::params::{Bindings, Initializer, ModelParams};
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Batch-norm behaviour for a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// `round(base · width_scale)` snapped to the nearest multiple of 16, at least 16.
pub fn scaled_channels(base: usize, width_scale: f64) -> usize {
    let raw = base as f64 * width_scale;
    ((raw / 16.0).round() as usize * 16).max(16)
}

/// Per-pass state: the tape, bound parameters and collected batch statistics.
pub struct Forward<'a, T: Scalar> {
    tape: &'a mut Tape<T>,
    params: &'a ModelParams<T>,
    vars: Bindings,
    mode: Mode,
    stats: Vec<(String, BnStats<T>)>,
}

impl<'a, T: Scalar> Forward<'a, T> {
    pub fn new(tape: &'a mut Tape<T>, params: &'a ModelParams<T>, mode: Mode) -> Result<Self> {
        let vars = params.bind(tape)?;
        Ok(Self {
            tape,
            params,
            vars,
            mode,
            stats: Vec::new(),
        })
    }

    /// Uses leaves created elsewhere (e.g. by a gradient checker) for the
    /// names in `vars`; `params` still supplies batch-norm running buffers.
    pub fn with_bindings(tape: &'a mut Tape<T>, params: &'a ModelParams<T>, vars: Bindings, mode: Mode) -> Self {
        Self {
            tape,
            params,
            vars,
            mode,
            stats: Vec::new(),
        }
    }

    pub fn tape(&mut self) -> &mut Tape<T> {
        self.tape
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn param(&self, name: &str) -> Result<Var> {
        self.vars.var(name)
    }

    pub fn conv(&mut self, prefix: &str, x: Var, spec: &Conv2dSpec) -> Result<Var> {
        let w = self.param(&format!("{prefix}.weight"))?;
        let b = if spec.bias {
            Some(self.param(&format!("{prefix}.bias"))?)
        } else {
            None
        };
        self.tape.conv2d(x, w, b, spec)
    }

    pub fn batch_norm(&mut self, prefix: &str, x: Var, channels: usize) -> Result<Var> {
        let gamma = self.param(&format!("{prefix}.gamma"))?;
        let beta = self.param(&format!("{prefix}.beta"))?;
        let bn = BatchNorm::new(channels);
        let (y, stats) = match self.mode {
            Mode::Train => self.tape.batch_norm2d(x, gamma, beta, &bn, BnMode::Train)?,
            Mode::Eval => {
                let mean = self.params.get(&format!("{prefix}.running_mean"))?.data();
                let var = self.params.get(&format!("{prefix}.running_var"))?.data();
                self.tape.batch_norm2d(
                    x,
                    gamma,
                    beta,
                    &bn,
                    BnMode::Eval {
                        running_mean: mean,
                        running_var: var,
                    },
                )?
            }
        };
        if let Some(s) = stats {
            self.stats.push((prefix.to_string(), s));
        }
        Ok(y)
    }

    /// conv → batch norm → ReLU
    pub fn conv_bn_relu(&mut self, prefix: &str, x: Var, spec: &Conv2dSpec) -> Result<Var> {
        let y = self.conv(prefix, x, spec)?;
        let y = self.batch_norm(&format!("{prefix}.bn"), y, spec.out_channels)?;
        self.tape.relu(y)
    }

    /// Batch statistics observed in train mode, in execution order.
    pub fn into_stats(self) -> Vec<(String, BnStats<T>)> {
        self.stats
    }
}

pub(crate) fn declare_conv<T: Scalar>(
    params: &mut ModelParams<T>,
    init: &mut Initializer,
    prefix: &str,
    spec: &Conv2dSpec,
) -> Result<()> {
    params.insert(
        format!("{prefix}.weight"),
        init.conv_weight(spec.weight_shape(), spec.fan_in()),
    )?;
    if spec.bias {
        params.insert(
            format!("{prefix}.bias"),
            Tensor::zeros(vec![spec.out_channels]).with_requires_grad(true),
        )?;
    }
    Ok(())
}

pub(crate) fn declare_bn<T: Scalar>(params: &mut ModelParams<T>, prefix: &str, channels: usize) -> Result<()> {
    params.insert(
        format!("{prefix}.gamma"),
        Tensor::ones(vec![channels]).with_requires_grad(true),
    )?;
    params.insert(
        format!("{prefix}.beta"),
        Tensor::zeros(vec![channels]).with_requires_grad(true),
    )?;
    params.insert(format!("{prefix}.running_mean"), Tensor::zeros(vec![channels]))?;
    params.insert(format!("{prefix}.running_var"), Tensor::ones(vec![channels]))?;
    Ok(())
}

/// Folds train-mode batch statistics into the running buffers.
pub fn update_running_stats<T: Scalar>(
    params: &mut ModelParams<T>,
    stats: &[(String, BnStats<T>)],
    momentum: f64,
) -> Result<()> {
    for (prefix, s) in stats {
        let mut mean = params.get(&format!("{prefix}.running_mean"))?.clone();
        let mut var = params.get(&format!("{prefix}.running_var"))?.clone();
        s.update_running(mean.data_mut(), var.data_mut(), momentum);
        *params.get_mut(&format!("{prefix}.running_mean"))? = mean;
        *params.get_mut(&format!("{prefix}.running_var"))? = var;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn channel_rounding() {
        assert_eq!(scaled_channels(64, 1.0), 64);
        assert_eq!(scaled_channels(512, 1.0), 512);
        assert_eq!(scaled_channels(64, 0.125), 16);
        assert_eq!(scaled_channels(512, 0.125), 64);
        assert_eq!(scaled_channels(256, 0.125), 32);
        assert_eq!(scaled_channels(128, 0.3), 32);
        assert_eq!(scaled_channels(64, 0.01), 16);
    }
}
