use std::collections::BTreeMap;
use std::sync::Arc;

use crate::{DiffError, Result, Tensor};

/// Ordered name → tensor map.
///
/// Tensors are reference counted so that merging stores (for example a
/// generated head with the shared body of a model) never copies the shared
/// parts. Iteration is in lexicographic name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: BTreeMap<String, Arc<Tensor>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a new entry; names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        self.insert_shared(name, Arc::new(tensor))
    }

    pub fn insert_shared(&mut self, name: impl Into<String>, tensor: Arc<Tensor>) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(DiffError::DuplicateParam(name));
        }
        self.entries.insert(name, tensor);
        Ok(())
    }

    /// Inserts or replaces.
    pub fn set(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.entries.insert(name.into(), Arc::new(tensor));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name).map(Arc::as_ref)
    }

    pub fn get_shared(&self, name: &str) -> Option<&Arc<Tensor>> {
        self.entries.get(name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| DiffError::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name).map(Arc::make_mut)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Arc<Tensor>> {
        self.entries.remove(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_ref()))
    }

    pub fn iter_shared(&self) -> impl Iterator<Item = (&str, &Arc<Tensor>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Total number of scalar values.
    pub fn numel(&self) -> usize {
        self.entries.values().map(|t| t.len()).sum()
    }

    /// Entries whose name starts with `prefix`, names kept as-is.
    pub fn filter_prefix(&self, prefix: &str) -> ParamStore {
        ParamStore {
            entries: self
                .entries
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), Arc::clone(v)))
                .collect(),
        }
    }

    /// Union of two stores; any shared name is an error.
    pub fn merged(&self, other: &ParamStore) -> Result<ParamStore> {
        let mut out = self.clone();
        for (k, v) in &other.entries {
            out.insert_shared(k.clone(), Arc::clone(v))?;
        }
        Ok(out)
    }

    /// Global L2 norm over every value.
    pub fn global_norm(&self) -> f64 {
        self.entries
            .values()
            .map(|t| t.sum_squares())
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.entries.values_mut() {
            Arc::make_mut(t).scale_in_place(factor);
        }
    }

    /// First entry holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.entries
            .iter()
            .find(|(_, t)| !t.is_finite())
            .map(|(k, _)| k.as_str())
    }

    /// Zero-valued store with the same names and shapes.
    pub fn zeros_like(&self) -> ParamStore {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|(k, t)| (k.clone(), Arc::new(Tensor::zeros(t.shape()))))
                .collect(),
        }
    }

    /// Adds `other` into `self` entry by entry. Names missing from `self` are
    /// inserted.
    pub fn accumulate(&mut self, other: &ParamStore) {
        for (k, v) in &other.entries {
            match self.entries.get_mut(k) {
                Some(t) => Arc::make_mut(t).add_assign(v),
                None => {
                    self.entries.insert(k.clone(), Arc::clone(v));
                }
            }
        }
    }
}

impl FromIterator<(String, Tensor)> for ParamStore {
    fn from_iter<I: IntoIterator<Item = (String, Tensor)>>(iter: I) -> Self {
        ParamStore {
            entries: iter.into_iter().map(|(k, v)| (k, Arc::new(v))).collect(),
        }
    }
}
