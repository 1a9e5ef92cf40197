//! Named, ordered parameter storage.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Gradients, Scalar, Tape, Tensor, Var};

/// Ordered collection of named tensors. Trainable entries have
/// `requires_grad` set; the rest (batch-norm running buffers) are state.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T = f32> {
    entries: Vec<(String, Tensor<T>)>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> Default for ModelParams<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ModelParams<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Param {
                name,
                msg: "duplicate name".into(),
            });
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push((name, tensor));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.index
            .get(name)
            .map(|&i| &self.entries[i].1)
            .ok_or_else(|| Error::Param {
                name: name.to_string(),
                msg: "not found".into(),
            })
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        match self.index.get(name) {
            Some(&i) => Ok(&mut self.entries[i].1),
            None => Err(Error::Param {
                name: name.to_string(),
                msg: "not found".into(),
            }),
        }
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|(_, t)| t.requires_grad())
            .map(|(_, t)| t.len())
            .sum()
    }

    /// Trainable scalars whose name starts with `prefix`.
    pub fn count_with_prefix(&self, prefix: &str) -> usize {
        self.entries
            .iter()
            .filter(|(n, t)| t.requires_grad() && n.starts_with(prefix))
            .map(|(_, t)| t.len())
            .sum()
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            entries: self.entries.iter().map(|(n, t)| (n.clone(), t.cast())).collect(),
            index: self.index.clone(),
        }
    }

    /// Replaces values by name. Every tensor of `other` must exist here with
    /// the same shape; the first mismatch is reported by name.
    pub fn load_from(&mut self, other: &ModelParams<T>) -> Result<()> {
        for (name, t) in other.iter() {
            let mine = self.get(name)?;
            if mine.shape() != t.shape() {
                return Err(Error::Param {
                    name: name.to_string(),
                    msg: format!("shape {:?} does not match expected {:?}", t.shape(), mine.shape()),
                });
            }
        }
        for (name, t) in other.iter() {
            let mine = self.get_mut(name)?;
            let flag = mine.requires_grad();
            *mine = t.clone().with_requires_grad(flag);
        }
        Ok(())
    }

    /// Registers every entry as a tape leaf.
    pub fn bind(&self, tape: &mut Tape<T>) -> Result<Bindings> {
        let mut vars = HashMap::with_capacity(self.entries.len());
        for (name, t) in &self.entries {
            vars.insert(name.clone(), tape.leaf(name.clone(), t.clone())?);
        }
        Ok(Bindings { vars })
    }

    /// Verifies that `grads` covers every trainable entry with matching shape.
    pub fn check_gradients(&self, grads: &Gradients<T>) -> Result<()> {
        for (name, t) in self.entries.iter().filter(|(_, t)| t.requires_grad()) {
            match grads.get(name) {
                Some(g) if g.shape() == t.shape() => {}
                Some(g) => {
                    return Err(Error::Param {
                        name: name.clone(),
                        msg: format!("gradient shape {:?} vs parameter {:?}", g.shape(), t.shape()),
                    })
                }
                None => {
                    return Err(Error::Param {
                        name: name.clone(),
                        msg: "missing gradient".into(),
                    })
                }
            }
        }
        Ok(())
    }
}

/// Tape handles of bound parameters.
#[derive(Debug, Clone)]
pub struct Bindings {
    vars: HashMap<String, Var>,
}

impl Bindings {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, Var)>) -> Self {
        Self {
            vars: pairs.into_iter().collect(),
        }
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars.get(name).copied().ok_or_else(|| Error::Param {
            name: name.to_string(),
            msg: "not bound".into(),
        })
    }
}

/// Seeded parameter initializer.
pub struct Initializer {
    rng: ChaCha8Rng,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Uniform in `±sqrt(6 / fan_in)`.
    pub fn conv_weight<T: Scalar>(&mut self, shape: Vec<usize>, fan_in: usize) -> Tensor<T> {
        let bound = (6.0 / fan_in as f64).sqrt();
        Tensor::uniform(shape, -bound, bound, &mut self.rng).with_requires_grad(true)
    }

    pub fn uniform<T: Scalar>(&mut self, shape: Vec<usize>, bound: f64) -> Tensor<T> {
        Tensor::uniform(shape, -bound, bound, &mut self.rng).with_requires_grad(true)
    }

    pub fn rng(&mut self) -> &mut impl Rng {
        &mut self.rng
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn insertion_order_and_lookup() {
        let mut p = ModelParams::<f32>::new();
        p.insert("b", Tensor::zeros(vec![2])).unwrap();
        p.insert("a", Tensor::ones(vec![1, 3]).with_requires_grad(true)).unwrap();
        assert_eq!(p.names().collect::<Vec<_>>(), vec!["b", "a"]);
        assert_eq!(p.trainable_count(), 3);
        assert!(p.insert("a", Tensor::zeros(vec![1])).is_err());
        assert!(p.get("c").is_err());
    }

    #[test]
    fn load_reports_first_mismatch() {
        let mut p = ModelParams::<f32>::new();
        p.insert("w", Tensor::zeros(vec![2, 2]).with_requires_grad(true)).unwrap();
        let mut q = ModelParams::<f32>::new();
        q.insert("w", Tensor::zeros(vec![4])).unwrap();
        let err = p.load_from(&q).unwrap_err();
        assert!(err.to_string().contains("`w`"), "{err}");

        let mut ok = ModelParams::<f32>::new();
        ok.insert("w", Tensor::ones(vec![2, 2])).unwrap();
        p.load_from(&ok).unwrap();
        assert!(p.get("w").unwrap().requires_grad());
        assert_eq!(p.get("w").unwrap().data(), &[1.0; 4]);
    }
}
