use std::sync::Arc;

use indexmap::IndexMap;

use crate::error::{NumericsError, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
struct Param {
    value: Arc<Tensor>,
    frozen: bool,
}

/// Named trainable tensors with a per-name freeze flag.
///
/// Values are reference counted so a [`crate::Tape`] can borrow them without
/// copying; mutation after the tape is dropped is copy-free.
#[derive(Debug, Clone, Default)]
pub struct ParameterStore {
    params: IndexMap<String, Param>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(NumericsError::DuplicateParameter(name));
        }
        self.params.insert(name, Param { value: Arc::new(value), frozen: false });
        Ok(())
    }

    /// Replaces the value of an existing parameter, keeping its freeze flag.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let p = self.params.get_mut(name).ok_or_else(|| NumericsError::UnknownParameter(name.to_string()))?;
        p.value = Arc::new(value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name).map(|p| p.value.as_ref())
    }

    pub(crate) fn get_shared(&self, name: &str) -> Option<(Arc<Tensor>, bool)> {
        self.params.get(name).map(|p| (Arc::clone(&p.value), p.frozen))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name).map(|p| Arc::make_mut(&mut p.value))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn is_frozen(&self, name: &str) -> bool {
        self.params.get(name).is_some_and(|p| p.frozen)
    }

    pub fn set_frozen(&mut self, name: &str, frozen: bool) -> Result<()> {
        let p = self.params.get_mut(name).ok_or_else(|| NumericsError::UnknownParameter(name.to_string()))?;
        p.frozen = frozen;
        Ok(())
    }

    /// Sets the freeze flag of every parameter whose name starts with `prefix`.
    /// Returns how many parameters matched.
    pub fn freeze_prefix(&mut self, prefix: &str, frozen: bool) -> usize {
        let mut n = 0;
        for (name, p) in self.params.iter_mut() {
            if name.starts_with(prefix) {
                p.frozen = frozen;
                n += 1;
            }
        }
        n
    }

    pub fn freeze_all(&mut self, frozen: bool) {
        self.params.values_mut().for_each(|p| p.frozen = frozen);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, p)| (k.as_str(), p.value.as_ref()))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar entries.
    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    pub fn num_scalars_with_prefix(&self, prefix: &str) -> usize {
        self.params.iter().filter(|(k, _)| k.starts_with(prefix)).map(|(_, p)| p.value.len()).sum()
    }

    /// Raw bytes of every parameter matching `prefix`, in store order.
    /// Used to certify freeze contracts bit-exactly.
    pub fn fingerprint_bytes(&self, prefix: &str) -> Vec<u8> {
        let mut out = Vec::new();
        for (name, p) in &self.params {
            if name.starts_with(prefix) {
                out.extend_from_slice(name.as_bytes());
                for v in p.value.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }
}

/// Gradients keyed by parameter name.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    map: IndexMap<String, Tensor>,
}

impl Gradients {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.map.get(name)
    }

    pub fn insert(&mut self, name: String, grad: Tensor) {
        self.map.insert(name, grad);
    }

    /// Adds `grad` into the entry for `name`, creating it if absent.
    pub fn accumulate(&mut self, name: &str, grad: &Tensor) {
        match self.map.get_mut(name) {
            Some(g) => g.add_assign(grad),
            None => {
                self.map.insert(name.to_string(), grad.clone());
            }
        }
    }

    pub fn merge(&mut self, other: &Gradients) {
        for (k, g) in &other.map {
            self.accumulate(k, g);
        }
    }

    pub fn scale(&mut self, c: f64) {
        self.map.values_mut().for_each(|g| g.scale_assign(c));
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn global_norm(&self) -> f64 {
        self.map.values().map(|g| g.data().iter().map(|x| x * x).sum::<f64>()).sum::<f64>().sqrt()
    }

    /// L2 norm over the gradients whose names start with `prefix`.
    pub fn norm_with_prefix(&self, prefix: &str) -> f64 {
        self.map.iter().filter(|(k, _)| k.starts_with(prefix)).map(|(_, g)| g.data().iter().map(|x| x * x).sum::<f64>()).sum::<f64>().sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.map.values().all(Tensor::all_finite)
    }

    /// Rescales so the global norm is at most `max_norm`. Returns the norm
    /// before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
        norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParameterStore::new();
        s.insert("a", Tensor::zeros(&[1])).unwrap();
        assert!(matches!(s.insert("a", Tensor::zeros(&[1])), Err(NumericsError::DuplicateParameter(_))));
    }

    #[test]
    fn freeze_prefix_counts() {
        let mut s = ParameterStore::new();
        s.insert("enc.w", Tensor::zeros(&[1])).unwrap();
        s.insert("enc.b", Tensor::zeros(&[1])).unwrap();
        s.insert("dlm.w", Tensor::zeros(&[1])).unwrap();
        assert_eq!(s.freeze_prefix("enc.", true), 2);
        assert!(s.is_frozen("enc.w") && !s.is_frozen("dlm.w"));
    }
}
