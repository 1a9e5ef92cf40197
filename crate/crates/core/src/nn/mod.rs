//! Structured neural-network operations with forward kernels and backward rules.

pub mod conv;
pub mod norm;
pub mod pool;
pub mod resize;

pub use conv::{conv1d_channel, conv2d, Conv2dGeometry, Conv2dSpec};
pub use norm::{BatchNorm, BnMode, BnStats};
pub use pool::{adaptive_avg_pool, max_pool2};
pub use resize::bilinear_resize;

use crate::error::{Error, Result};
use crate::tensor::{Op, Scalar, Tape, Tensor, Var};

impl<T: Scalar> Tape<T> {
    /// Stacks `a` (C1×H×W) and `b` (C2×H×W) along the channel axis.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ca, ha, wa) = self.value(a).chw()?;
        let (cb, hb, wb) = self.value(b).chw()?;
        if (ha, wa) != (hb, wb) {
            return Err(Error::ShapeMismatch {
                op: "concat_channels",
                lhs: vec![ca, ha, wa],
                rhs: vec![cb, hb, wb],
            });
        }
        let mut data = Vec::with_capacity((ca + cb) * ha * wa);
        data.extend_from_slice(self.value(a).data());
        data.extend_from_slice(self.value(b).data());
        let value = Tensor::from_parts(vec![ca + cb, ha, wa], data);
        self.push("concat_channels", value, Op::Concat { a, b }, &[a, b])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_orders_channels_and_splits_gradient() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf("a", Tensor::zeros(vec![1, 2, 2]).with_requires_grad(true)).unwrap();
        let b = tape.leaf("b", Tensor::ones(vec![1, 2, 2]).with_requires_grad(true)).unwrap();
        let c = tape.concat_channels(a, b).unwrap();
        let out = tape.value(c).clone();
        assert_eq!(out.shape(), &[2, 2, 2]);
        assert_eq!(out.slice_channels(0, 1).unwrap().data(), &[0.0; 4]);
        assert_eq!(out.slice_channels(1, 1).unwrap().data(), &[1.0; 4]);
        let s = tape.sum_all(c).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get("a").unwrap().data(), &[1.0; 4]);
        assert_eq!(g.get("b").unwrap().data(), &[1.0; 4]);
    }

    #[test]
    fn concat_then_slice_round_trips() {
        let mut rng = rand::thread_rng();
        let x = Tensor::<f64>::uniform(vec![3, 4, 5], -1.0, 1.0, &mut rng);
        let y = Tensor::<f64>::uniform(vec![2, 4, 5], -1.0, 1.0, &mut rng);
        let mut tape = Tape::new();
        let (a, b) = (tape.constant(x.clone()).unwrap(), tape.constant(y.clone()).unwrap());
        let c = tape.concat_channels(a, b).unwrap();
        assert_eq!(tape.value(c).slice_channels(0, 3).unwrap().data(), x.data());
        assert_eq!(tape.value(c).slice_channels(3, 2).unwrap().data(), y.data());
    }

    #[test]
    fn concat_spatial_mismatch_rejected() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::zeros(vec![1, 2, 2])).unwrap();
        let b = tape.constant(Tensor::zeros(vec![1, 3, 2])).unwrap();
        assert!(matches!(
            tape.concat_channels(a, b).unwrap_err(),
            Error::ShapeMismatch { op: "concat_channels", .. }
        ));
    }
}
