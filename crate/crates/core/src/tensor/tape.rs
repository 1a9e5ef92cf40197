//! Operation tape for reverse-mode differentiation.
//!
//! Every forward op appends a node holding its output value and whatever the
//! backward rule needs. `backward` walks the nodes in reverse, accumulating
//! gradients, and then clears the tape; a tape supports exactly one backward.

use std::collections::BTreeMap;

use super::{numel, BroadcastIndex, Scalar, Tensor};
use crate::error::{Error, Result};
use crate::nn::{conv, norm, pool, resize};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
    Div,
    Relu,
    Tanh,
    Abs,
}

impl Elementwise {
    fn name(self) -> &'static str {
        match self {
            Elementwise::Add => "add",
            Elementwise::Sub => "sub",
            Elementwise::Mul => "mul",
            Elementwise::Div => "div",
            Elementwise::Relu => "relu",
            Elementwise::Tanh => "tanh",
            Elementwise::Abs => "abs",
        }
    }

    fn is_binary(self) -> bool {
        matches!(
            self,
            Elementwise::Add | Elementwise::Sub | Elementwise::Mul | Elementwise::Div
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduce {
    Sum,
    /// `sqrt(sum(x²) + epsilon)`
    L2Norm,
}

pub(crate) enum Op<T> {
    Leaf,
    Binary {
        kind: Elementwise,
        a: Var,
        b: Var,
        ia: BroadcastIndex,
        ib: BroadcastIndex,
    },
    Unary {
        kind: Elementwise,
        a: Var,
    },
    Scale {
        a: Var,
        factor: T,
    },
    Offset {
        a: Var,
    },
    Reduce {
        kind: Reduce,
        x: Var,
        map: BroadcastIndex,
    },
    Reshape {
        a: Var,
    },
    Conv2d {
        x: Var,
        weight: Var,
        bias: Option<Var>,
        geom: conv::Conv2dGeometry,
    },
    Conv1dChannel {
        s: Var,
        kernel: Var,
    },
    BatchNormTrain {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    BatchNormEval {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    AdaptiveAvgPool {
        x: Var,
        plan: pool::PoolPlan,
    },
    MaxPool2 {
        x: Var,
        argmax: Vec<usize>,
    },
    Bilinear {
        x: Var,
        plan: resize::ResizePlan<T>,
    },
    Concat {
        a: Var,
        b: Var,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    name: Option<String>,
}

/// Gradients of a scalar loss, keyed by leaf name.
#[derive(Clone)]
pub struct Gradients<T = f32> {
    by_name: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> std::fmt::Debug for Gradients<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_map().entries(self.by_name.iter()).finish()
    }
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.by_name.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.by_name.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.by_name.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_name.is_empty()
    }
}

/// Records executed operations for a single backward pass.
pub struct Tape<T = f32> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn live(&self) -> Result<()> {
        if self.consumed {
            Err(Error::TapeConsumed)
        } else {
            Ok(())
        }
    }

    pub(crate) fn push(&mut self, op_name: &'static str, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        self.live()?;
        value.ensure_finite(op_name)?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            name: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Registers a named leaf. It receives a gradient when `tensor.requires_grad()`.
    pub fn leaf(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<Var> {
        self.live()?;
        let name = name.into();
        tensor.ensure_finite("leaf")?;
        if tensor.requires_grad()
            && self
                .nodes
                .iter()
                .any(|n| n.requires_grad && n.name.as_deref() == Some(name.as_str()))
        {
            return Err(Error::invalid("leaf", format!("duplicate leaf name `{name}`")));
        }
        let requires_grad = tensor.requires_grad();
        self.nodes.push(Node {
            value: tensor,
            op: Op::Leaf,
            requires_grad,
            name: Some(name),
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Registers a value that never receives a gradient.
    pub fn constant(&mut self, tensor: Tensor<T>) -> Result<Var> {
        self.live()?;
        tensor.ensure_finite("constant")?;
        self.nodes.push(Node {
            value: tensor.with_requires_grad(false),
            op: Op::Leaf,
            requires_grad: false,
            name: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn elementwise(&mut self, kind: Elementwise, a: Var, b: Option<Var>) -> Result<Var> {
        match (kind.is_binary(), b) {
            (true, Some(b)) => self.binary(kind, a, b),
            (false, None) => self.unary(kind, a),
            (true, None) => Err(Error::invalid(kind.name(), "binary op needs two operands")),
            (false, Some(_)) => Err(Error::invalid(kind.name(), "unary op takes one operand")),
        }
    }

    fn binary(&mut self, kind: Elementwise, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let out_shape = super::broadcast_shape(&sa, &sb).map_err(|_| Error::ShapeMismatch {
            op: kind.name(),
            lhs: sa.clone(),
            rhs: sb.clone(),
        })?;
        let ia = BroadcastIndex::new(&out_shape, &sa);
        let ib = BroadcastIndex::new(&out_shape, &sb);
        let (xa, xb) = (self.value(a).data(), self.value(b).data());
        let n = numel(&out_shape);
        let f: fn(T, T) -> T = match kind {
            Elementwise::Add => |x, y| x + y,
            Elementwise::Sub => |x, y| x - y,
            Elementwise::Mul => |x, y| x * y,
            Elementwise::Div => |x, y| x / y,
            _ => unreachable!(),
        };
        let data: Vec<T> = (0..n).map(|i| f(xa[ia.get(i)], xb[ib.get(i)])).collect();
        let value = Tensor::from_parts(out_shape, data);
        self.push(kind.name(), value, Op::Binary { kind, a, b, ia, ib }, &[a, b])
    }

    fn unary(&mut self, kind: Elementwise, a: Var) -> Result<Var> {
        let f: fn(T) -> T = match kind {
            Elementwise::Relu => |x| if x > T::zero() { x } else { T::zero() },
            Elementwise::Tanh => |x| x.tanh(),
            Elementwise::Abs => |x| x.abs(),
            _ => unreachable!(),
        };
        let value = self.value(a).map(f);
        self.push(kind.name(), value, Op::Unary { kind, a }, &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Elementwise::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Elementwise::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Elementwise::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Elementwise::Div, a, b)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(Elementwise::Relu, a)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(Elementwise::Tanh, a)
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.unary(Elementwise::Abs, a)
    }

    /// `factor · a`
    pub fn scale(&mut self, a: Var, factor: T) -> Result<Var> {
        let value = self.value(a).map(|x| x * factor);
        self.push("scale", value, Op::Scale { a, factor }, &[a])
    }

    /// `a + offset`
    pub fn offset(&mut self, a: Var, offset: T) -> Result<Var> {
        let value = self.value(a).map(|x| x + offset);
        self.push("offset", value, Op::Offset { a }, &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let value = self.value(a).reshape(shape)?.with_requires_grad(false);
        self.push("reshape", value, Op::Reshape { a }, &[a])
    }

    /// Reduces `x` over `axes`. Reduced axes are kept as size 1 when
    /// `keep_dims`, removed otherwise (a full reduction yields shape `[1]`).
    /// An empty axis set returns a copy of `x`.
    pub fn reduce(&mut self, kind: Reduce, x: Var, axes: &[usize], epsilon: T, keep_dims: bool) -> Result<Var> {
        let op_name = match kind {
            Reduce::Sum => "sum",
            Reduce::L2Norm => "l2_norm",
        };
        if epsilon < T::zero() {
            return Err(Error::invalid(op_name, "epsilon must be nonnegative"));
        }
        let in_shape = self.shape(x).to_vec();
        for &axis in axes {
            if axis >= in_shape.len() {
                return Err(Error::InvalidAxis {
                    op: op_name,
                    axis,
                    rank: in_shape.len(),
                });
            }
        }
        if axes.is_empty() {
            let value = self.value(x).clone().with_requires_grad(false);
            return self.push(op_name, value, Op::Reshape { a: x }, &[x]);
        }
        let kept: Vec<usize> = in_shape
            .iter()
            .enumerate()
            .map(|(i, &d)| if axes.contains(&i) { 1 } else { d })
            .collect();
        let map = BroadcastIndex::new(&in_shape, &kept);
        let src = self.value(x).data();
        let mut acc = vec![T::zero(); numel(&kept)];
        match kind {
            Reduce::Sum => {
                for (i, &v) in src.iter().enumerate() {
                    acc[map.get(i)] += v;
                }
            }
            Reduce::L2Norm => {
                for (i, &v) in src.iter().enumerate() {
                    acc[map.get(i)] += v * v;
                }
                for a in &mut acc {
                    *a = (*a + epsilon).sqrt();
                }
            }
        }
        let out_shape = if keep_dims {
            kept
        } else {
            let removed: Vec<usize> = in_shape
                .iter()
                .enumerate()
                .filter(|(i, _)| !axes.contains(i))
                .map(|(_, &d)| d)
                .collect();
            if removed.is_empty() {
                vec![1]
            } else {
                removed
            }
        };
        let value = Tensor::from_parts(out_shape, acc);
        self.push(op_name, value, Op::Reduce { kind, x, map }, &[x])
    }

    /// Sum over every axis, shape `[1]`.
    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let axes: Vec<usize> = (0..self.shape(x).len()).collect();
        self.reduce(Reduce::Sum, x, &axes, T::zero(), false)
    }

    /// Runs the backward pass from a scalar `loss` and clears the tape.
    ///
    /// Every named leaf that requires grad appears in the result; leaves the
    /// loss does not depend on receive zeros.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        self.live()?;
        let loss_shape = self.shape(loss).to_vec();
        if numel(&loss_shape) != 1 {
            return Err(Error::NotScalar(loss_shape));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(i, &g, &mut grads)?;
        }

        let mut by_name = BTreeMap::new();
        for (i, node) in self.nodes.iter_mut().enumerate() {
            if !(node.requires_grad && matches!(node.op, Op::Leaf)) {
                continue;
            }
            let Some(name) = node.name.take() else { continue };
            let shape = node.value.shape().to_vec();
            let data = grads[i].take().unwrap_or_else(|| vec![T::zero(); numel(&shape)]);
            let grad = Tensor::from_parts(shape, data);
            grad.ensure_finite("backward")?;
            by_name.insert(name, grad);
        }
        self.nodes.clear();
        self.consumed = true;
        Ok(Gradients { by_name })
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Binary { kind, a, b, ia, ib } => {
                let (xa, xb) = (self.value(*a).data(), self.value(*b).data());
                if needs(*a) {
                    let mut ga = vec![T::zero(); xa.len()];
                    for (k, &gk) in g.iter().enumerate() {
                        let (pa, pb) = (ia.get(k), ib.get(k));
                        ga[pa] += match kind {
                            Elementwise::Add | Elementwise::Sub => gk,
                            Elementwise::Mul => gk * xb[pb],
                            Elementwise::Div => gk / xb[pb],
                            _ => unreachable!(),
                        };
                    }
                    accumulate(grads, *a, ga);
                }
                if needs(*b) {
                    let mut gb = vec![T::zero(); xb.len()];
                    for (k, &gk) in g.iter().enumerate() {
                        let (pa, pb) = (ia.get(k), ib.get(k));
                        gb[pb] += match kind {
                            Elementwise::Add => gk,
                            Elementwise::Sub => -gk,
                            Elementwise::Mul => gk * xa[pa],
                            Elementwise::Div => -gk * xa[pa] / (xb[pb] * xb[pb]),
                            _ => unreachable!(),
                        };
                    }
                    accumulate(grads, *b, gb);
                }
            }
            Op::Unary { kind, a } => {
                let x = self.value(*a).data();
                let y = node.value.data();
                let ga: Vec<T> = match kind {
                    Elementwise::Relu => g
                        .iter()
                        .zip(x)
                        .map(|(&gk, &xk)| if xk > T::zero() { gk } else { T::zero() })
                        .collect(),
                    Elementwise::Tanh => g
                        .iter()
                        .zip(y)
                        .map(|(&gk, &yk)| gk * (T::one() - yk * yk))
                        .collect(),
                    // Subgradient 0 at the kink.
                    Elementwise::Abs => g
                        .iter()
                        .zip(x)
                        .map(|(&gk, &xk)| {
                            if xk > T::zero() {
                                gk
                            } else if xk < T::zero() {
                                -gk
                            } else {
                                T::zero()
                            }
                        })
                        .collect(),
                    _ => unreachable!(),
                };
                accumulate(grads, *a, ga);
            }
            Op::Scale { a, factor } => {
                accumulate(grads, *a, g.iter().map(|&v| v * *factor).collect());
            }
            Op::Offset { a } | Op::Reshape { a } => accumulate(grads, *a, g.to_vec()),
            Op::Reduce { kind, x, map } => {
                let xs = self.value(*x).data();
                let ga: Vec<T> = match kind {
                    Reduce::Sum => (0..xs.len()).map(|k| g[map.get(k)]).collect(),
                    Reduce::L2Norm => {
                        let norm = node.value.data();
                        (0..xs.len())
                            .map(|k| {
                                let m = map.get(k);
                                g[m] * xs[k] / norm[m]
                            })
                            .collect()
                    }
                };
                accumulate(grads, *x, ga);
            }
            Op::Conv2d {
                x,
                weight,
                bias,
                geom,
            } => {
                if needs(*x) {
                    let gx = conv::conv2d_backward_input(g, self.value(*weight).data(), geom);
                    accumulate(grads, *x, gx);
                }
                if needs(*weight) {
                    let gw = conv::conv2d_backward_weight(g, self.value(*x).data(), geom);
                    accumulate(grads, *weight, gw);
                }
                if let Some(b) = bias {
                    if needs(*b) {
                        accumulate(grads, *b, conv::channel_sums(g, geom.c_out));
                    }
                }
            }
            Op::Conv1dChannel { s, kernel } => {
                let (sv, kv) = (self.value(*s).data(), self.value(*kernel).data());
                if needs(*s) {
                    accumulate(grads, *s, conv::conv1d_backward_input(g, kv));
                }
                if needs(*kernel) {
                    accumulate(grads, *kernel, conv::conv1d_backward_kernel(g, sv, kv.len()));
                }
            }
            Op::BatchNormTrain {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let gam = self.value(*gamma).data();
                let back = norm::batch_norm_train_backward(g, xhat, inv_std, gam);
                if needs(*x) {
                    accumulate(grads, *x, back.input);
                }
                if needs(*gamma) {
                    accumulate(grads, *gamma, back.gamma);
                }
                if needs(*beta) {
                    accumulate(grads, *beta, back.beta);
                }
            }
            Op::BatchNormEval {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let gam = self.value(*gamma).data();
                let back = norm::batch_norm_eval_backward(g, xhat, inv_std, gam);
                if needs(*x) {
                    accumulate(grads, *x, back.input);
                }
                if needs(*gamma) {
                    accumulate(grads, *gamma, back.gamma);
                }
                if needs(*beta) {
                    accumulate(grads, *beta, back.beta);
                }
            }
            Op::AdaptiveAvgPool { x, plan } => {
                accumulate(grads, *x, plan.backward(g));
            }
            Op::MaxPool2 { x, argmax } => {
                let mut gx = vec![T::zero(); self.value(*x).len()];
                for (&src, &gk) in argmax.iter().zip(g) {
                    gx[src] += gk;
                }
                accumulate(grads, *x, gx);
            }
            Op::Bilinear { x, plan } => {
                accumulate(grads, *x, plan.backward(g));
            }
            Op::Concat { a, b } => {
                let split = self.value(*a).len();
                if needs(*a) {
                    accumulate(grads, *a, g[..split].to_vec());
                }
                if needs(*b) {
                    accumulate(grads, *b, g[split..].to_vec());
                }
            }
        }
        Ok(())
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, contribution: Vec<T>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, c) in existing.iter_mut().zip(contribution) {
                *e += c;
            }
        }
        slot @ None => *slot = Some(contribution),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn tanh_of_zero_is_zero() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(vec![2, 3])).unwrap();
        let y = tape.tanh(x).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn relu_clamps_negatives() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[3], &[-1.0, 0.0, 2.0])).unwrap();
        let y = tape.elementwise(Elementwise::Relu, x, None).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn mul_broadcasts_scalar() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(t(&[2], &[2.0, 3.0])).unwrap();
        let b = tape.constant(t(&[1], &[0.5])).unwrap();
        let y = tape.elementwise(Elementwise::Mul, a, Some(b)).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 1.5]);
    }

    #[test]
    fn incompatible_shapes_rejected() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::zeros(vec![2, 3])).unwrap();
        let b = tape.constant(Tensor::zeros(vec![4, 3])).unwrap();
        let err = tape.add(a, b).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { op: "add", .. }), "{err}");
    }

    #[test]
    fn reduce_examples() {
        let mut tape = Tape::<f64>::new();
        let z = tape.constant(Tensor::zeros(vec![3, 3])).unwrap();
        let n = tape.reduce(Reduce::L2Norm, z, &[0, 1], 1e-4, false).unwrap();
        assert!((tape.value(n)[0] - 0.01).abs() < 1e-15);

        let v = tape.constant(t(&[2], &[3.0, 4.0])).unwrap();
        let n = tape.reduce(Reduce::L2Norm, v, &[0], 0.0, false).unwrap();
        assert_eq!(tape.value(n)[0], 5.0);

        let o = tape.constant(Tensor::ones(vec![2, 2])).unwrap();
        let s = tape.reduce(Reduce::Sum, o, &[0, 1], 0.0, false).unwrap();
        assert_eq!(tape.value(s).data(), &[4.0]);
    }

    #[test]
    fn reduce_keep_dims_and_partial_axes() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[2, 3], &[1., 2., 3., 4., 5., 6.])).unwrap();
        let rows = tape.reduce(Reduce::Sum, x, &[1], 0.0, true).unwrap();
        assert_eq!(tape.shape(rows), &[2, 1]);
        assert_eq!(tape.value(rows).data(), &[6.0, 15.0]);
        let cols = tape.reduce(Reduce::Sum, x, &[0], 0.0, false).unwrap();
        assert_eq!(tape.shape(cols), &[3]);
        assert_eq!(tape.value(cols).data(), &[5.0, 7.0, 9.0]);
    }

    #[test]
    fn reduce_empty_axes_is_identity_and_bad_axis_rejected() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[2], &[1.0, -2.0])).unwrap();
        let y = tape.reduce(Reduce::L2Norm, x, &[], 0.5, false).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, -2.0]);
        let err = tape.reduce(Reduce::Sum, x, &[1], 0.0, false).unwrap_err();
        assert!(matches!(err, Error::InvalidAxis { axis: 1, rank: 1, .. }));
    }

    #[test]
    fn grad_of_sum_is_ones() {
        let mut tape = Tape::<f64>::new();
        let x = tape
            .leaf("x", Tensor::uniform(vec![2, 3, 4], -1.0, 1.0, &mut rand::thread_rng()).with_requires_grad(true))
            .unwrap();
        let s = tape.sum_all(x).unwrap();
        let g = tape.backward(s).unwrap();
        assert!(g.get("x").unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn grad_of_square_sum() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf("x", t(&[2], &[1.0, 2.0]).with_requires_grad(true)).unwrap();
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum_all(sq).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get("x").unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn unreachable_leaf_gets_zero() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf("x", t(&[2], &[1.0, 2.0]).with_requires_grad(true)).unwrap();
        let _y = tape.leaf("y", t(&[3], &[1.0, 2.0, 3.0]).with_requires_grad(true)).unwrap();
        let s = tape.sum_all(x).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get("y").unwrap().data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn backward_rules_enforced() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf("x", t(&[2], &[1.0, 2.0]).with_requires_grad(true)).unwrap();
        let err = tape.backward(x).unwrap_err();
        assert!(matches!(err, Error::NotScalar(_)));
        let s = tape.sum_all(x).unwrap();
        tape.backward(s).unwrap();
        assert!(tape.is_empty());
        assert!(matches!(tape.backward(s).unwrap_err(), Error::TapeConsumed));
    }

    #[test]
    fn non_finite_output_names_op() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(t(&[1], &[1.0])).unwrap();
        let z = tape.constant(t(&[1], &[0.0])).unwrap();
        let err = tape.div(a, z).unwrap_err();
        assert!(matches!(err, Error::NonFinite { op: "div", index: 0 }));
    }

    #[test]
    fn diamond_graph_accumulates() {
        // y = sum(x*x + x) → 2x + 1
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf("x", t(&[3], &[0.5, -1.0, 2.0]).with_requires_grad(true)).unwrap();
        let sq = tape.mul(x, x).unwrap();
        let y = tape.add(sq, x).unwrap();
        let s = tape.sum_all(y).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get("x").unwrap().data(), &[2.0, -1.0, 5.0]);
    }

    proptest::proptest! {
        #[test]
        fn sum_is_linear(
            xs in proptest::collection::vec(-1.0f64..1.0, 12),
            ys in proptest::collection::vec(-1.0f64..1.0, 12),
            alpha in -2.0f64..2.0,
            beta in -2.0f64..2.0,
        ) {
            let mut tape = Tape::<f64>::new();
            let x = tape.constant(t(&[3, 4], &xs)).unwrap();
            let y = tape.constant(t(&[3, 4], &ys)).unwrap();
            let ax = tape.scale(x, alpha).unwrap();
            let by = tape.scale(y, beta).unwrap();
            let z = tape.add(ax, by).unwrap();
            let sz = tape.sum_all(z).unwrap();
            let sx = tape.sum_all(x).unwrap();
            let sy = tape.sum_all(y).unwrap();
            let lhs = tape.value(sz)[0];
            let rhs = alpha * tape.value(sx)[0] + beta * tape.value(sy)[0];
            proptest::prop_assert!((lhs - rhs).abs() <= 1e-6 * lhs.abs().max(rhs.abs()).max(1.0));
        }

        #[test]
        fn l2_norm_squared_matches_sum_of_squares(
            xs in proptest::collection::vec(-1.0f64..1.0, 1..20),
            eps in 0.0f64..1e-2,
        ) {
            let n = xs.len();
            let mut tape = Tape::<f64>::new();
            let x = tape.constant(t(&[n], &xs)).unwrap();
            let norm = tape.reduce(Reduce::L2Norm, x, &[0], eps, false).unwrap();
            let sq = tape.mul(x, x).unwrap();
            let s = tape.sum_all(sq).unwrap();
            let lhs = tape.value(norm)[0].powi(2);
            let rhs = tape.value(s)[0] + eps;
            proptest::prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(1e-12));
        }
    }
}
