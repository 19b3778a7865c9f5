use std::collections::BTreeMap;

use super::{Graph, Tensor, Var};

/// A named learnable tensor. `frozen_rows` are first-axis rows that never
/// receive gradient updates (e.g. the PAD row of a word table).
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub frozen_rows: Vec<usize>,
}

/// Ordered parameter collection; iteration order is insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    index: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or replaces a parameter.
    pub fn insert(&mut self, name: &str, value: Tensor) {
        self.insert_frozen(name, value, Vec::new());
    }

    pub fn insert_frozen(&mut self, name: &str, value: Tensor, frozen_rows: Vec<usize>) {
        let param = Param {
            name: name.to_string(),
            value,
            frozen_rows,
        };
        match self.index.get(name) {
            Some(&i) => self.params[i] = param,
            None => {
                self.index.insert(name.to_string(), self.params.len());
                self.params.push(param);
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.index.get(name).map(|&i| &mut self.params[i])
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> Vec<&str> {
        self.params.iter().map(|p| p.name.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar entries.
    pub fn num_elements(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Registers every parameter as a trainable leaf of `graph`.
    pub fn bind(&self, graph: &mut Graph) -> Bindings {
        let vars = self.params.iter().map(|p| graph.leaf(p.value.clone())).collect();
        Bindings {
            vars,
            index: self.index.clone(),
        }
    }

    /// Gradients aligned with `iter()`; parameters the loss never reached get
    /// zeros, frozen rows are zeroed.
    pub fn gradients(&self, graph: &Graph, bindings: &Bindings) -> Vec<Tensor> {
        self.params
            .iter()
            .zip(&bindings.vars)
            .map(|(p, &v)| {
                let mut g = graph.grad(v).unwrap_or_else(|| Tensor::zeros(p.value.shape()));
                zero_rows(&mut g, &p.frozen_rows);
                g
            })
            .collect()
    }
}

pub(crate) fn zero_rows(t: &mut Tensor, rows: &[usize]) {
    if rows.is_empty() {
        return;
    }
    let inner = t.numel() / t.shape()[0];
    for &r in rows {
        t.data_mut()[r * inner..(r + 1) * inner].fill(0.0);
    }
}

/// Graph handles for a bound [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Bindings {
    vars: Vec<Var>,
    index: BTreeMap<String, usize>,
}

impl Bindings {
    pub fn get(&self, name: &str) -> Option<Var> {
        self.index.get(name).map(|&i| self.vars[i])
    }

    /// Like [`Bindings::get`] but panics on unknown names.
    pub fn var(&self, name: &str) -> Var {
        self.get(name).unwrap_or_else(|| panic!("parameter `{name}` is not bound"))
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}
