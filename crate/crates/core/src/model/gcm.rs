//! Global context module: per-channel L2 context embedding, cross-channel
//! 1-D convolution, channel normalization and a tanh gate multiplied back
//! onto the features.

use super::Forward;
use crate::error::{Error, Result};
use crate::params::{Initializer, ModelParams};
use crate::tensor::{Reduce, Scalar, Tape, Tensor, Var};

/// Gate form applied to `w·s̃ + β`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateForm {
    /// `1 + tanh(·)`: identity when `w = β = 0`.
    Residual,
    /// `tanh(·)`: zero when `w = β = 0`.
    Literal,
}

/// Numerator of the channel normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormScale {
    SqrtChannels,
    /// Fault-injection variant (`C` instead of `sqrt(C)`), used by the verify suite.
    Channels,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GcmConfig {
    pub channels: usize,
    pub kernel_size: usize,
    pub epsilon: f64,
    pub gate: GateForm,
    pub norm_scale: NormScale,
}

impl GcmConfig {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            kernel_size: 3,
            epsilon: 1e-4,
            gate: GateForm::Residual,
            norm_scale: NormScale::SqrtChannels,
        }
    }

    pub fn declare<T: Scalar>(&self, params: &mut ModelParams<T>, init: &mut Initializer) -> Result<()> {
        let c = self.channels;
        params.insert("gcm.alpha", Tensor::ones(vec![c]).with_requires_grad(true))?;
        params.insert(
            "gcm.kernel",
            init.uniform(vec![self.kernel_size], 1.0 / 3f64.sqrt()),
        )?;
        params.insert("gcm.gate_weight", Tensor::zeros(vec![c]).with_requires_grad(true))?;
        params.insert("gcm.gate_bias", Tensor::zeros(vec![c]).with_requires_grad(true))?;
        Ok(())
    }
}

/// `s_c = α_c · sqrt(Σ_ij x_c² + ε)` for a `C×h×w` input.
pub fn gcm_embed<T: Scalar>(tape: &mut Tape<T>, x: Var, alpha: Var, epsilon: T) -> Result<Var> {
    let (c, _, _) = tape.value(x).chw()?;
    if tape.shape(alpha) != [c] {
        return Err(Error::ShapeMismatch {
            op: "gcm_embed",
            lhs: tape.shape(x).to_vec(),
            rhs: tape.shape(alpha).to_vec(),
        });
    }
    let norms = tape.reduce(Reduce::L2Norm, x, &[1, 2], epsilon, false)?;
    tape.mul(alpha, norms)
}

/// `ŝ = conv1d(s)`, then `s̃ = sqrt(C)·ŝ / sqrt(Σ ŝ² + ε)`.
pub fn gcm_transform<T: Scalar>(tape: &mut Tape<T>, s: Var, kernel: Var, epsilon: T, scale: NormScale) -> Result<Var> {
    let c = tape.value(s).len();
    let s_hat = tape.conv1d_channel(s, kernel)?;
    let norm = tape.reduce(Reduce::L2Norm, s_hat, &[0], epsilon, false)?;
    let factor = match scale {
        NormScale::SqrtChannels => T::lit(c as f64).sqrt(),
        NormScale::Channels => T::lit(c as f64),
    };
    let scaled = tape.scale(s_hat, factor)?;
    tape.div(scaled, norm)
}

/// Multiplies channel `c` of `x` by its gate value.
pub fn gcm_gate_apply<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    s_tilde: Var,
    weight: Var,
    bias: Var,
    form: GateForm,
) -> Result<Var> {
    let (c, _, _) = tape.value(x).chw()?;
    for v in [s_tilde, weight, bias] {
        if tape.shape(v) != [c] {
            return Err(Error::ShapeMismatch {
                op: "gcm_gate_apply",
                lhs: vec![c],
                rhs: tape.shape(v).to_vec(),
            });
        }
    }
    let z = tape.mul(weight, s_tilde)?;
    let z = tape.add(z, bias)?;
    let mut gate = tape.tanh(z)?;
    if form == GateForm::Residual {
        gate = tape.offset(gate, T::one())?;
    }
    let gate = tape.reshape(gate, vec![c, 1, 1])?;
    tape.mul(x, gate)
}

pub fn gcm_forward<T: Scalar>(f: &mut Forward<'_, T>, config: &GcmConfig, x: Var) -> Result<Var> {
    let eps = T::lit(config.epsilon);
    let alpha = f.param("gcm.alpha")?;
    let kernel = f.param("gcm.kernel")?;
    let weight = f.param("gcm.gate_weight")?;
    let bias = f.param("gcm.gate_bias")?;
    let tape = f.tape();
    let s = gcm_embed(tape, x, alpha, eps)?;
    let s_tilde = gcm_transform(tape, s, kernel, eps, config.norm_scale)?;
    gcm_gate_apply(tape, x, s_tilde, weight, bias, config.gate)
}
