use std::collections::BTreeMap;

use rand::Rng;

use super::Tensor;
use crate::error::{Error, Result};
use crate::rng;

/// Gradients keyed by parameter name.
pub type GradMap = BTreeMap<String, Vec<f64>>;

/// Named parameters, iterated in name order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a trainable parameter.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.params.insert(name.into(), tensor.with_requires_grad(true));
    }

    /// Inserts a tensor keeping its own `requires_grad` flag.
    pub fn insert_raw(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.params.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        self.params.remove(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    /// Total scalar count of parameters whose name starts with `prefix`.
    pub fn count_prefix(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, t)| t.len())
            .sum()
    }

    pub fn scalar_count(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Copy of the parameters under `prefix`.
    pub fn subset(&self, prefix: &str) -> ParamStore {
        ParamStore {
            params: self
                .params
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Moves every entry of `other` into `self`, replacing existing names.
    pub fn extend(&mut self, other: ParamStore) {
        self.params.extend(other.params);
    }

    /// Uniform(−1/√fanin, 1/√fanin) from the stream named after the parameter.
    pub fn init_uniform(&mut self, seed: u64, name: &str, shape: &[usize], fanin: usize) {
        let bound = 1.0 / (fanin.max(1) as f64).sqrt();
        let mut r = rng::stream(seed, &format!("init/{name}"));
        let n = shape.iter().product();
        let values = (0..n).map(|_| r.random_range(-bound..bound)).collect();
        self.insert(name, Tensor::new(shape, values).expect("shape product matches"));
    }

    pub fn init_const(&mut self, name: &str, shape: &[usize], value: f64) {
        let n = shape.iter().product();
        self.insert(name, Tensor::new(shape, vec![value; n]).expect("shape product matches"));
    }

    /// Sets `requires_grad` on every parameter. A store with the flag
    /// cleared binds as constants and never receives gradients.
    pub fn set_trainable(&mut self, flag: bool) {
        for t in self.params.values_mut() {
            t.requires_grad = flag;
        }
    }

    pub fn any_trainable(&self) -> bool {
        self.params.values().any(|t| t.requires_grad)
    }

    /// Replaces the values of an existing parameter, keeping its shape.
    pub fn set_values(&mut self, name: &str, values: Vec<f64>) -> Result<()> {
        let t = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::State(format!("parameter `{name}` is not initialised")))?;
        if values.len() != t.len() {
            return Err(Error::shape(format!(
                "parameter `{name}` holds {} values, got {}",
                t.len(),
                values.len()
            )));
        }
        t.values = values;
        Ok(())
    }
}

/// Adds `(name, grad)` pairs into `acc`.
pub fn accumulate(acc: &mut GradMap, grads: Vec<(String, Vec<f64>)>) {
    for (name, g) in grads {
        match acc.get_mut(&name) {
            Some(a) => a.iter_mut().zip(&g).for_each(|(x, y)| *x += y),
            None => {
                acc.insert(name, g);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_init_is_bounded_and_reproducible() {
        let mut a = ParamStore::new();
        a.init_uniform(3, "w", &[4, 25], 25);
        let mut b = ParamStore::new();
        b.init_uniform(3, "w", &[4, 25], 25);
        assert_eq!(a, b);
        assert!(a.get("w").unwrap().values().iter().all(|v| v.abs() <= 0.2));
        assert_eq!(a.scalar_count(), 100);
    }

    #[test]
    fn accumulate_sums_by_name() {
        let mut acc = GradMap::new();
        accumulate(&mut acc, vec![("a".into(), vec![1.0, 2.0])]);
        accumulate(&mut acc, vec![("a".into(), vec![0.5, 0.5]), ("b".into(), vec![3.0])]);
        assert_eq!(acc["a"], vec![1.5, 2.5]);
        assert_eq!(acc["b"], vec![3.0]);
    }
}
