use std::collections::{BTreeMap, HashMap};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Named trainable tensors of one model, kept in name order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet<T> {
    tensors: BTreeMap<String, Tensor<T>>,
}

/// Graph variables bound to each parameter for one forward pass.
#[derive(Debug, Clone, Default)]
pub struct Bindings {
    vars: HashMap<String, Var>,
}

impl Bindings {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::IndexError(format!("no parameter named `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.vars.contains_key(name)
    }
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet {
            tensors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.tensors.insert(name.into(), t.with_grad(true));
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::IndexError(format!("no parameter named `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::IndexError(format!("no parameter named `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Adds every parameter to `g` as a leaf. With `trainable == false` the
    /// leaves are constants and no gradient is tracked (inference).
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Bindings {
        let vars = self
            .tensors
            .iter()
            .map(|(name, t)| {
                let leaf = Tensor::new(t.shape().to_vec(), t.data().to_vec())
                    .expect("parameter shape is consistent")
                    .with_grad(trainable && t.requires_grad());
                (name.clone(), g.leaf(leaf))
            })
            .collect();
        Bindings { vars }
    }

    /// Adds the leaf gradients of `g` into each parameter's gradient buffer.
    pub fn absorb_grads(&mut self, g: &Graph<T>, bindings: &Bindings) -> Result<()> {
        for (name, t) in self.tensors.iter_mut() {
            if !t.requires_grad() {
                continue;
            }
            let var = bindings.get(name)?;
            if let Some(grad) = g.grad(var) {
                t.accumulate_grad(grad)?;
            }
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        self.tensors.values_mut().for_each(Tensor::zero_grad);
    }

    /// Parameters as plain `(name, shape, data)` triples.
    pub fn flat(&self) -> Vec<(String, Vec<usize>, Vec<T>)> {
        self.tensors
            .iter()
            .map(|(n, t)| (n.clone(), t.shape().to_vec(), t.data().to_vec()))
            .collect()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(Tensor::is_finite)
    }

    /// True when both sets hold the same names with the same shapes.
    pub fn same_layout(&self, other: &ParamSet<T>) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(other.tensors.iter())
                .all(|((na, ta), (nb, tb))| na == nb && ta.shape() == tb.shape())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bind_and_absorb() {
        let mut p = ParamSet::<f64>::new();
        p.insert("w", Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap());
        let mut g = Graph::new();
        let b = p.bind(&mut g, true);
        let w = b.get("w").unwrap();
        let s = g.sum(w).unwrap();
        g.backward(s).unwrap();
        p.absorb_grads(&g, &b).unwrap();
        assert_eq!(p.get("w").unwrap().grad().unwrap(), &[1.0, 1.0]);
        assert!(b.get("missing").is_err());
    }

    #[test]
    fn inference_binding_tracks_nothing() {
        let mut p = ParamSet::<f64>::new();
        p.insert("w", Tensor::zeros(vec![3]));
        let mut g = Graph::new();
        let b = p.bind(&mut g, false);
        assert!(!g.requires_grad(b.get("w").unwrap()));
    }
}
