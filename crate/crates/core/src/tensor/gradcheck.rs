//! Central finite-difference checks of tape gradients (64-bit only).

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Outcome of a gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic − numeric| / max(|analytic|, |numeric|, 1e-8)`
    pub max_rel_error: f64,
    /// Input name and flat index of the worst component.
    pub worst: Option<(String, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

impl GradCheckReport {
    fn new() -> Self {
        Self {
            max_rel_error: 0.0,
            worst: None,
            analytic: 0.0,
            numeric: 0.0,
            checked: 0,
        }
    }
}

/// Which components to perturb.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Check at most this many components per input (sampled without
    /// replacement); `None` checks all of them.
    pub max_per_input: Option<usize>,
    pub seed: u64,
}

impl GradCheckOptions {
    pub fn exhaustive(step: f64) -> Self {
        Self {
            step,
            max_per_input: None,
            seed: 0,
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Checks `d f(x) / dx` for a scalar-valued `f` by central differences with step `h`.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let inputs = [("x".to_string(), x.clone())];
    grad_check_many(|tape, vars| f(tape, vars[0]), &inputs, GradCheckOptions::exhaustive(h))
}

/// Multi-input variant: `f` receives one leaf per named input, in order.
pub fn grad_check_many<F>(f: F, inputs: &[(String, Tensor<f64>)], opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>], grad: bool| -> Result<(f64, Option<super::Gradients<f64>>)> {
        let mut tape = Tape::new();
        let vars = inputs
            .iter()
            .zip(values)
            .map(|((name, _), v)| tape.leaf(name.clone(), v.clone().with_requires_grad(grad)))
            .collect::<Result<Vec<_>>>()?;
        let out = f(&mut tape, &vars)?;
        let value = tape.value(out).data()[0];
        if tape.value(out).len() != 1 {
            return Err(Error::NotScalar(tape.shape(out).to_vec()));
        }
        let grads = if grad { Some(tape.backward(out)?) } else { None };
        Ok((value, grads))
    };

    let mut values: Vec<Tensor<f64>> = inputs.iter().map(|(_, t)| t.clone()).collect();
    let (_, grads) = eval(&values, true)?;
    let grads = grads.expect("gradients requested");

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport::new();
    for (slot, (name, tensor)) in inputs.iter().enumerate() {
        let analytic = grads
            .get(name)
            .ok_or_else(|| Error::invalid("grad_check", format!("no gradient for `{name}`")))?;
        let n = tensor.len();
        let components: Vec<usize> = match opts.max_per_input {
            Some(k) if k < n => {
                let mut idx = sample(&mut rng, n, k).into_vec();
                idx.sort_unstable();
                idx
            }
            _ => (0..n).collect(),
        };
        for i in components {
            let original = values[slot].data()[i];
            let perturbed = |values: &mut Vec<Tensor<f64>>, delta: f64| -> Result<f64> {
                values[slot].data_mut()[i] = original + delta;
                let r = eval(values, false);
                values[slot].data_mut()[i] = original;
                r.map(|(v, _)| v).map_err(|e| {
                    Error::invalid("grad_check", format!("component {name}[{i}]: {e}"))
                })
            };
            let plus = perturbed(&mut values, opts.step)?;
            let minus = perturbed(&mut values, -opts.step)?;
            let numeric = (plus - minus) / (2.0 * opts.step);
            let a = analytic.data()[i];
            if !numeric.is_finite() {
                return Err(Error::invalid(
                    "grad_check",
                    format!("component {name}[{i}]: non-finite difference quotient"),
                ));
            }
            let err = relative_error(a, numeric);
            report.checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((name.clone(), i));
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
