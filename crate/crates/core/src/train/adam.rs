//! Bias-corrected Adam.

use crate::error::{Error, Result};
use crate::params::ModelParams;
use crate::tensor::{Gradients, Scalar};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moments for every trainable tensor, in parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    moments: Vec<(String, Vec<T>, Vec<T>)>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ModelParams<T>) -> Self {
        let moments = params
            .iter()
            .filter(|(_, t)| t.requires_grad())
            .map(|(n, t)| (n.to_string(), vec![T::zero(); t.len()], vec![T::zero(); t.len()]))
            .collect();
        Self { step: 0, moments }
    }

    pub fn moments(&self, name: &str) -> Option<(&[T], &[T])> {
        self.moments
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, m, v)| (m.as_slice(), v.as_slice()))
    }
}

/// One update of every trainable tensor from `grads`.
pub fn adam_step<T: Scalar>(
    params: &mut ModelParams<T>,
    state: &mut AdamState<T>,
    grads: &Gradients<T>,
    cfg: &AdamConfig,
) -> Result<()> {
    params.check_gradients(grads)?;
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let (ob1, ob2) = (T::lit(1.0 - cfg.beta1), T::lit(1.0 - cfg.beta2));
    let step_size = T::lit(cfg.lr / c1);
    let inv_c2 = T::lit(1.0 / c2);
    let eps = T::lit(cfg.epsilon);
    for (name, m, v) in &mut state.moments {
        let g = grads.get(name).expect("checked above");
        let p = params.get_mut(name)?;
        if p.len() != m.len() {
            return Err(Error::Param {
                name: name.clone(),
                msg: format!("moment length {} vs parameter {}", m.len(), p.len()),
            });
        }
        for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = b1 * *mi + ob1 * gi;
            *vi = b2 * *vi + ob2 * gi * gi;
            *w -= step_size * *mi / ((*vi * inv_c2).sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Tape, Tensor};

    fn setup(values: Vec<f64>) -> ModelParams<f64> {
        let mut p = ModelParams::new();
        p.insert("w", Tensor::from_vec(vec![values.len()], values).unwrap().with_requires_grad(true))
            .unwrap();
        p
    }

    /// Gradients of `Σ c_i·w_i`, i.e. the constant `c`.
    fn grads(params: &ModelParams<f64>, c: &[f64]) -> Gradients<f64> {
        let mut tape = Tape::new();
        let b = params.bind(&mut tape).unwrap();
        let k = tape.constant(Tensor::from_vec(vec![c.len()], c.to_vec()).unwrap()).unwrap();
        let y = tape.mul(b.var("w").unwrap(), k).unwrap();
        let l = tape.sum_all(y).unwrap();
        tape.backward(l).unwrap()
    }

    #[test]
    fn first_step_matches_closed_form() {
        let mut p = setup(vec![0.5, -1.5]);
        let mut s = AdamState::new(&p);
        let cfg = AdamConfig { lr: 1e-3, ..Default::default() };
        let g = [0.3, -2.0];
        let gr = grads(&p, &g);
        adam_step(&mut p, &mut s, &gr, &cfg).unwrap();
        for (i, (&w0, &gi)) in [0.5, -1.5].iter().zip(&g).enumerate() {
            let m = 0.1 * gi / (1.0 - 0.9);
            let v = 0.001 * gi * gi / (1.0 - 0.999);
            let expect = w0 - 1e-3 * m / (f64::sqrt(v) + 1e-8);
            assert!((p.get("w").unwrap().data()[i] - expect).abs() <= 1e-10);
        }
        assert_eq!(s.step, 1);
    }

    #[test]
    fn zero_gradient_from_rest_is_a_no_op() {
        let mut p = setup(vec![1.0, 2.0]);
        let mut s = AdamState::new(&p);
        let gr = grads(&p, &[0.0, 0.0]);
        adam_step(&mut p, &mut s, &gr, &AdamConfig::default()).unwrap();
        assert_eq!(p.get("w").unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn moments_decay_under_zero_gradient() {
        let mut p = setup(vec![1.0, 2.0]);
        let mut s = AdamState::new(&p);
        let cfg = AdamConfig::default();
        let gr = grads(&p, &[1.0, -1.0]);
        adam_step(&mut p, &mut s, &gr, &cfg).unwrap();
        let (m0, v0) = s.moments("w").map(|(m, v)| (m.to_vec(), v.to_vec())).unwrap();
        let gr = grads(&p, &[0.0, 0.0]);
        adam_step(&mut p, &mut s, &gr, &cfg).unwrap();
        let (m1, v1) = s.moments("w").unwrap();
        for i in 0..2 {
            assert!((m1[i] - 0.9 * m0[i]).abs() < 1e-15);
            assert!((v1[i] - 0.999 * v0[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_gradient_update_tends_to_lr() {
        let mut p = setup(vec![0.0]);
        let mut s = AdamState::new(&p);
        let cfg = AdamConfig { lr: 1e-3, ..Default::default() };
        let mut last = 0.0;
        for _ in 0..200 {
            let before = p.get("w").unwrap().data()[0];
            let gr = grads(&p, &[4.0]);
            adam_step(&mut p, &mut s, &gr, &cfg).unwrap();
            last = before - p.get("w").unwrap().data()[0];
        }
        assert!((last - 1e-3).abs() < 1e-8);
    }

    #[test]
    fn missing_gradient_rejected() {
        let mut p = setup(vec![1.0]);
        let mut s = AdamState::new(&p);
        let other = setup(vec![1.0, 2.0]);
        let g = grads(&other, &[1.0, 1.0]);
        assert!(adam_step(&mut p, &mut s, &g, &AdamConfig::default()).is_err());
    }
}
