//! Pyramidal scale module: a local and a global pyramidal-convolution block
//! run in parallel, concatenated along channels.
//!
//! A block is: 1×1 entry conv to width P, four grouped branches with
//! kernels 9/7/5/3 (each P/4 wide), concatenation, then a 1×1 fuse conv.
//! Every conv is followed by batch norm and ReLU and carries no bias.

use super::{declare_bn, declare_conv, Forward};
use crate::error::Result;
use crate::nn::Conv2dSpec;
use crate::params::{Initializer, ModelParams};
use crate::tensor::{Scalar, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct PsmConfig {
    pub in_channels: usize,
    /// Block width P.
    pub width: usize,
    pub kernels: [usize; 4],
    /// Nominal group counts; reduced where they do not divide the branch widths.
    pub groups: [usize; 4],
    /// Spatial size the global block pools to.
    pub pool_size: usize,
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl PsmConfig {
    pub fn new(in_channels: usize, width: usize) -> Self {
        Self {
            in_channels,
            width,
            kernels: [9, 7, 5, 3],
            groups: [16, 8, 4, 1],
            pool_size: 9,
        }
    }

    pub fn branch_width(&self) -> usize {
        self.width / 4
    }

    pub fn out_channels(&self) -> usize {
        2 * self.width
    }

    /// Largest divisor of both branch input (P) and output (P/4) widths not
    /// exceeding the nominal group count.
    pub fn branch_groups(&self) -> [usize; 4] {
        let common = gcd(self.width, self.branch_width());
        self.groups
            .map(|g| (1..=g.min(common)).rev().find(|d| common % d == 0).unwrap_or(1))
    }

    pub fn entry_spec(&self) -> Conv2dSpec {
        Conv2dSpec::new(self.in_channels, self.width, 1).bias(false)
    }

    pub fn branch_specs(&self) -> [Conv2dSpec; 4] {
        let groups = self.branch_groups();
        std::array::from_fn(|i| {
            Conv2dSpec::new(self.width, self.branch_width(), self.kernels[i])
                .groups(groups[i])
                .bias(false)
        })
    }

    pub fn fuse_spec(&self) -> Conv2dSpec {
        Conv2dSpec::new(self.width, self.width, 1).bias(false)
    }

    /// Closed-form trainable parameter count of one block (conv weights plus
    /// batch-norm scale and shift).
    pub fn block_param_count(&self) -> usize {
        let p = self.width;
        let b = self.branch_width();
        let groups = self.branch_groups();
        let entry = self.in_channels * p + 2 * p;
        let branches: usize = (0..4)
            .map(|i| b * (p / groups[i]) * self.kernels[i] * self.kernels[i] + 2 * b)
            .sum();
        let fuse = p * p + 2 * p;
        entry + branches + fuse
    }

    pub fn declare<T: Scalar>(&self, params: &mut ModelParams<T>, init: &mut Initializer) -> Result<()> {
        for block in ["psm.local", "psm.global"] {
            self.declare_block(params, init, block)?;
        }
        Ok(())
    }

    fn declare_block<T: Scalar>(&self, params: &mut ModelParams<T>, init: &mut Initializer, prefix: &str) -> Result<()> {
        let entry = self.entry_spec();
        declare_conv(params, init, &format!("{prefix}.entry"), &entry)?;
        declare_bn(params, &format!("{prefix}.entry.bn"), entry.out_channels)?;
        for (i, spec) in self.branch_specs().iter().enumerate() {
            let name = format!("{prefix}.branch{}", self.kernels[i]);
            declare_conv(params, init, &name, spec)?;
            declare_bn(params, &format!("{name}.bn"), spec.out_channels)?;
        }
        let fuse = self.fuse_spec();
        declare_conv(params, init, &format!("{prefix}.fuse"), &fuse)?;
        declare_bn(params, &format!("{prefix}.fuse.bn"), fuse.out_channels)?;
        Ok(())
    }
}

fn pyconv_block<T: Scalar>(f: &mut Forward<'_, T>, config: &PsmConfig, prefix: &str, x: Var) -> Result<Var> {
    let entry = f.conv_bn_relu(&format!("{prefix}.entry"), x, &config.entry_spec())?;
    let mut merged: Option<Var> = None;
    for (i, spec) in config.branch_specs().iter().enumerate() {
        let b = f.conv_bn_relu(&format!("{prefix}.branch{}", config.kernels[i]), entry, spec)?;
        merged = Some(match merged {
            None => b,
            Some(m) => f.tape().concat_channels(m, b)?,
        });
    }
    let merged = merged.expect("four branches");
    f.conv_bn_relu(&format!("{prefix}.fuse"), merged, &config.fuse_spec())
}

/// Local view: the pyramidal block at native resolution.
pub fn local_pyconv<T: Scalar>(f: &mut Forward<'_, T>, config: &PsmConfig, x: Var) -> Result<Var> {
    pyconv_block(f, config, "psm.local", x)
}

/// Global view: adaptive pooling to `pool_size` (capped at the input
/// extent), the pyramidal block, then bilinear resize back.
pub fn global_pyconv<T: Scalar>(f: &mut Forward<'_, T>, config: &PsmConfig, x: Var) -> Result<Var> {
    let (_, h, w) = f.tape().value(x).chw()?;
    let (ph, pw) = (config.pool_size.min(h), config.pool_size.min(w));
    let pooled = f.tape().adaptive_avg_pool(x, ph, pw)?;
    let y = pyconv_block(f, config, "psm.global", pooled)?;
    f.tape().bilinear_resize(y, h, w)
}

/// `[local ; global]`, `2P×h×w`.
pub fn psm_forward<T: Scalar>(f: &mut Forward<'_, T>, config: &PsmConfig, x: Var) -> Result<Var> {
    let local = local_pyconv(f, config, x)?;
    let global = global_pyconv(f, config, x)?;
    f.tape().concat_channels(local, global)
}
