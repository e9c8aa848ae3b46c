use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Named parameter tensors, iterated in name order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.tensors.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
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

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
                .collect(),
        }
    }

    /// Errors unless both stores hold the same names with the same shapes.
    pub fn check_layout(&self, other: &Self) -> Result<()> {
        for (name, t) in &self.tensors {
            let o = other
                .tensors
                .get(name)
                .ok_or_else(|| Error::InvalidArgument(format!("missing parameter `{name}`")))?;
            if o.shape() != t.shape() {
                return Err(Error::ShapeMismatch {
                    op: "param_layout",
                    left: t.shape().to_vec(),
                    right: o.shape().to_vec(),
                });
            }
        }
        if other.tensors.len() != self.tensors.len() {
            let extra = other.names().find(|n| !self.tensors.contains_key(*n));
            return Err(Error::InvalidArgument(format!(
                "unexpected parameter `{}`",
                extra.map_or("?", |s| s.as_str())
            )));
        }
        Ok(())
    }

    /// Copies every tensor into `prefix.name` of `out`.
    pub fn merge_into(&self, prefix: &str, out: &mut ParamStore) {
        for (k, v) in &self.tensors {
            out.insert(format!("{prefix}.{k}"), v.clone());
        }
    }

    /// Extracts the tensors under `prefix.` with the prefix stripped.
    pub fn split_prefix(&self, prefix: &str) -> ParamStore {
        let p = format!("{prefix}.");
        Self {
            tensors: self
                .tensors
                .iter()
                .filter_map(|(k, v)| k.strip_prefix(&p).map(|s| (s.to_string(), v.clone())))
                .collect(),
        }
    }
}

/// Parameters of one store registered as graph leaves.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn new(graph: &mut Graph, store: &ParamStore, requires_grad: bool) -> Self {
        let vars = store
            .iter()
            .map(|(k, v)| (k.clone(), graph.leaf(v.clone(), requires_grad)))
            .collect();
        Self { vars }
    }

    pub fn from_vars(vars: BTreeMap<String, Var>) -> Self {
        Self { vars }
    }

    /// The same parameters behind stop-gradient nodes.
    pub fn detached(&self, graph: &mut Graph) -> Result<Self> {
        let mut vars = BTreeMap::new();
        for (k, &v) in &self.vars {
            vars.insert(k.clone(), graph.stop_grad(v)?);
        }
        Ok(Self { vars })
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter `{name}`")))
    }

    pub fn vars(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    /// Gradients from the graph's last backward pass, keyed like the store.
    pub fn grads(&self, graph: &Graph) -> ParamStore {
        let mut out = ParamStore::new();
        for (k, v) in &self.vars {
            out.insert(k.clone(), graph.grad(*v));
        }
        out
    }
}
