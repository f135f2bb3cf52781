use std::collections::{BTreeMap, HashMap};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// A named, optionally trainable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
    pub trainable: bool,
}

/// Ordered collection of uniquely named parameters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor, trainable: bool) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        if !tensor.is_finite() {
            return Err(Error::NonFinite(format!("parameter `{name}`")));
        }
        self.index.insert(name.clone(), self.params.len());
        self.params.push(Parameter {
            name,
            tensor,
            trainable,
        });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Parameter> {
        self.index
            .get(name)
            .map(|&i| &self.params[i])
            .ok_or_else(|| Error::Missing(format!("parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Parameter> {
        match self.index.get(name) {
            Some(&i) => Ok(&mut self.params[i]),
            None => Err(Error::Missing(format!("parameter `{name}`"))),
        }
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.get(name).map(|p| &p.tensor)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar values across all parameters.
    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    pub fn set_all_trainable(&mut self, trainable: bool) {
        for p in &mut self.params {
            p.trainable = trainable;
        }
    }

    /// Copies every parameter of `other` into `self`, prepending `new_prefix`
    /// to its name.
    pub fn extend_prefixed(&mut self, other: &ParamStore, new_prefix: &str) -> Result<()> {
        for p in other.iter() {
            self.insert(format!("{new_prefix}{}", p.name), p.tensor.clone(), p.trainable)?;
        }
        Ok(())
    }

    /// Sub-store of parameters under `prefix`, with the prefix stripped.
    pub fn strip_prefix(&self, prefix: &str) -> Result<ParamStore> {
        let mut out = ParamStore::new();
        for p in self.iter() {
            if let Some(rest) = p.name.strip_prefix(prefix) {
                out.insert(rest, p.tensor.clone(), p.trainable)?;
            }
        }
        Ok(out)
    }

    pub fn without(&self, names: &[&str]) -> ParamStore {
        let mut out = ParamStore::new();
        for p in self.iter().filter(|p| !names.contains(&p.name.as_str())) {
            out.params.push(p.clone());
            out.index.insert(p.name.clone(), out.params.len() - 1);
        }
        out
    }
}

/// Gradients keyed by parameter name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    grads: BTreeMap<String, Tensor>,
}

impl Gradients {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.grads.get(name)
    }

    pub(crate) fn accumulate(&mut self, name: &str, grad: Tensor) {
        match self.grads.get_mut(name) {
            Some(existing) => {
                for (a, b) in existing.data_mut().iter_mut().zip(grad.data()) {
                    *a += b;
                }
            }
            None => {
                self.grads.insert(name.to_string(), grad);
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.grads.iter()
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .values()
            .flat_map(|t| t.data().iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales all gradients so their joint L2 norm is at most `max_norm`.
    pub fn clip_global_norm(&mut self, max_norm: f64) {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            let scale = max_norm / norm;
            for t in self.grads.values_mut() {
                t.data_mut().iter_mut().for_each(|g| *g *= scale);
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.grads.values_mut() {
            t.data_mut().iter_mut().for_each(|g| *g *= factor);
        }
    }

    /// Adds `other` into `self`, parameter by parameter.
    pub fn merge(&mut self, other: Gradients) {
        for (name, g) in other.grads {
            self.accumulate(&name, g);
        }
    }
}
