//! Named parameter collections and their binding onto a [`Graph`].

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io;
use crate::tensor::{Graph, Real, Tensor, Var};

/// Trainable tensors plus non-trainable buffers (batch-norm running stats).
///
/// Iteration order is lexicographic by name, which fixes checkpoint byte
/// layout and optimizer update order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T: Real> {
    params: BTreeMap<String, Tensor<T>>,
    buffers: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: BTreeMap::new(),
            buffers: BTreeMap::new(),
        }
    }

    pub fn insert_param(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.params.insert(name.into(), t);
    }

    pub fn insert_buffer(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.buffers.insert(name.into(), t);
    }

    pub fn param(&self, name: &str) -> Result<&Tensor<T>> {
        self.params
            .get(name)
            .ok_or_else(|| Error::Contract(format!("no parameter named {name:?}")))
    }

    pub fn param_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::Contract(format!("no parameter named {name:?}")))
    }

    pub fn buffer(&self, name: &str) -> Result<&Tensor<T>> {
        self.buffers
            .get(name)
            .ok_or_else(|| Error::Contract(format!("no buffer named {name:?}")))
    }

    pub fn set_buffer(&mut self, name: &str, t: Tensor<T>) -> Result<()> {
        let slot = self
            .buffers
            .get_mut(name)
            .ok_or_else(|| Error::Contract(format!("no buffer named {name:?}")))?;
        if slot.shape() != t.shape() {
            return Err(Error::dim(format!(
                "buffer {name:?}: {:?} replaced by {:?}",
                slot.shape(),
                t.shape()
            )));
        }
        *slot = t;
        Ok(())
    }

    pub fn params(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self.params.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
            buffers: self.buffers.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    /// Every tensor (parameters and buffers) in name order.
    pub fn entries(&self) -> Vec<(String, Tensor<T>)> {
        let mut all: Vec<_> = self
            .params
            .iter()
            .chain(&self.buffers)
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        all.sort_by(|a, b| a.0.cmp(&b.0));
        all
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_file(path, &self.entries())
    }

    /// Overwrite every tensor of this store from a checkpoint. Names and
    /// shapes must match exactly.
    pub fn load_from(&mut self, path: &Path) -> Result<()> {
        let entries = io::read_file::<T>(path)?;
        let expected = self.params.len() + self.buffers.len();
        if entries.len() != expected {
            return Err(Error::Format(format!(
                "{}: checkpoint has {} entries, model expects {expected}",
                path.display(),
                entries.len()
            )));
        }
        for (name, t) in entries {
            let slot = self
                .params
                .get_mut(&name)
                .or_else(|| self.buffers.get_mut(&name))
                .ok_or_else(|| Error::Format(format!("unexpected checkpoint entry {name:?}")))?;
            if slot.shape() != t.shape() {
                return Err(Error::Format(format!(
                    "checkpoint entry {name:?} has shape {:?}, model expects {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t;
        }
        Ok(())
    }

    /// Place every parameter on `graph` as a leaf.
    pub fn bind(&self, graph: &mut Graph<T>, requires_grad: bool) -> Bound {
        Bound {
            vars: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), graph.leaf(v.clone(), requires_grad)))
                .collect(),
        }
    }
}

/// Parameter name → graph node, for one forward pass.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Contract(format!("parameter {name:?} is not bound")))
    }

    /// Gradients for every bound parameter; parameters the loss does not
    /// reach get zeros.
    pub fn grads<T: Real>(&self, graph: &Graph<T>) -> Grads<T> {
        Grads(
            self.vars
                .iter()
                .map(|(k, &v)| {
                    let g = graph
                        .grad(v)
                        .unwrap_or_else(|| Tensor::zeros(graph.shape(v)));
                    (k.clone(), g)
                })
                .collect(),
        )
    }
}

/// Gradients keyed by parameter name.
#[derive(Clone, Debug, PartialEq)]
pub struct Grads<T: Real>(pub BTreeMap<String, Tensor<T>>);

impl<T: Real> Grads<T> {
    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.0.get(name)
    }

    pub fn all_finite(&self) -> bool {
        self.0.values().all(Tensor::all_finite)
    }
}
