//! Named parameter storage with paired gradient buffers.
//!
//! Entries keep declaration order, which fixes the serialization order of
//! checkpoints and makes optimizer sweeps deterministic. Values are immutable
//! [`Tensor`]s (cheap to snapshot via `clone`); gradients are flat `f64`
//! buffers accumulated by the tape and zeroed by the caller between steps.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

#[derive(Clone)]
struct Entry {
    name: String,
    value: Tensor,
    grad: Vec<f64>,
}

/// Ordered collection of named tensors and their gradients. The embedded
/// seed lets model constructors derive their initialization streams from the
/// store they populate.
#[derive(Clone, Default)]
pub struct ParamStore {
    entries: Vec<Entry>,
    index: HashMap<String, usize>,
    pub seed: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_seed(seed: u64) -> Self {
        ParamStore { seed, ..Self::default() }
    }

    /// Declares a parameter. Names are unique for the store's lifetime.
    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(Error::DuplicateParam { name: name.to_string() });
        }
        let grad = vec![0.0; value.len()];
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push(Entry { name: name.to_string(), value, grad });
        Ok(())
    }

    fn idx(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::MissingParam { name: name.to_string() })
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        Ok(&self.entries[self.idx(name)?].value)
    }

    /// Replaces a parameter's value; the shape must not change and the new
    /// data must be finite (a divergent optimizer step surfaces here).
    pub fn set_value(&mut self, name: &str, data: Vec<f64>) -> Result<()> {
        let i = self.idx(name)?;
        let shape = self.entries[i].value.shape().to_vec();
        if data.len() != self.entries[i].value.len() {
            return Err(Error::shape(
                "set_value",
                format!("{name}: expected {} values, got {}", self.entries[i].value.len(), data.len()),
            ));
        }
        let t = Tensor::new(shape, data)
            .map_err(|_| Error::NonFinite { context: format!("parameter update for {name}") })?;
        self.entries[i].value = t;
        Ok(())
    }

    pub fn grad(&self, name: &str) -> Result<&[f64]> {
        Ok(&self.entries[self.idx(name)?].grad)
    }

    /// Accumulates `delta` into the gradient buffer for `name`.
    pub fn grad_add(&mut self, name: &str, delta: &[f64]) -> Result<()> {
        let i = self.idx(name)?;
        let g = &mut self.entries[i].grad;
        if g.len() != delta.len() {
            return Err(Error::shape(
                "grad_add",
                format!("{name}: gradient has {} values, delta has {}", g.len(), delta.len()),
            ));
        }
        for (gi, di) in g.iter_mut().zip(delta) {
            *gi += di;
        }
        Ok(())
    }

    /// Scales every gradient buffer (used to average over a batch).
    pub fn scale_grads(&mut self, c: f64) {
        for e in &mut self.entries {
            for g in &mut e.grad {
                *g *= c;
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Parameter names in declaration order.
    pub fn names(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.name.clone()).collect()
    }

    /// (name, value) pairs in declaration order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|e| (e.name.as_str(), &e.value))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar values across all parameters.
    pub fn total_values(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    /// Copies all values from `other`, which must hold exactly the same
    /// parameter names and shapes (used to revert a rejected update).
    pub fn restore_values(&mut self, other: &ParamStore) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::shape(
                "restore_values",
                format!("{} entries vs {}", self.len(), other.len()),
            ));
        }
        for i in 0..self.entries.len() {
            let theirs = &other.entries[i];
            if self.entries[i].name != theirs.name
                || self.entries[i].value.shape() != theirs.value.shape()
            {
                return Err(Error::shape(
                    "restore_values",
                    format!("entry {i}: {} vs {}", self.entries[i].name, theirs.name),
                ));
            }
            self.entries[i].value = theirs.value.clone();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_and_missing_names_error() {
        let mut s = ParamStore::new();
        s.insert("a", Tensor::zeros(vec![2])).unwrap();
        assert!(matches!(
            s.insert("a", Tensor::zeros(vec![2])),
            Err(Error::DuplicateParam { .. })
        ));
        assert!(matches!(s.value("b"), Err(Error::MissingParam { .. })));
    }

    #[test]
    fn declaration_order_is_preserved() {
        let mut s = ParamStore::new();
        for name in ["w2", "a1", "m0"] {
            s.insert(name, Tensor::zeros(vec![1])).unwrap();
        }
        assert_eq!(s.names(), vec!["w2", "a1", "m0"]);
    }

    #[test]
    fn grad_accumulates_and_zeroes() {
        let mut s = ParamStore::new();
        s.insert("x", Tensor::zeros(vec![2])).unwrap();
        s.grad_add("x", &[1.0, 2.0]).unwrap();
        s.grad_add("x", &[0.5, -1.0]).unwrap();
        assert_eq!(s.grad("x").unwrap(), &[1.5, 1.0]);
        s.zero_grads();
        assert_eq!(s.grad("x").unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn set_value_rejects_non_finite_and_wrong_length() {
        let mut s = ParamStore::new();
        s.insert("x", Tensor::zeros(vec![2])).unwrap();
        assert!(s.set_value("x", vec![1.0]).is_err());
        assert!(s.set_value("x", vec![f64::NAN, 0.0]).is_err());
        s.set_value("x", vec![3.0, 4.0]).unwrap();
        assert_eq!(s.value("x").unwrap().data(), &[3.0, 4.0]);
    }

    #[test]
    fn restore_values_reverts_but_keeps_grads() {
        let mut s = ParamStore::new();
        s.insert("x", Tensor::from_vec(vec![1.0]).unwrap()).unwrap();
        let snap = s.clone();
        s.set_value("x", vec![9.0]).unwrap();
        s.grad_add("x", &[2.0]).unwrap();
        s.restore_values(&snap).unwrap();
        assert_eq!(s.value("x").unwrap().data(), &[1.0]);
        assert_eq!(s.grad("x").unwrap(), &[2.0]);
    }
}
