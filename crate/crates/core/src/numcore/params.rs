use super::Tensor;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// A named trainable array with its accumulated gradient.
#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    /// Whether the L2 penalty applies (weight matrices only).
    pub decay: bool,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, decay: bool) -> ParamId {
        let grad = Tensor::zeros(value.shape());
        self.params.push(Parameter { name: name.into(), value, grad, decay });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    /// Adds a backward pass's gradients into the stored ones.
    pub fn accumulate(&mut self, grads: &Grads) {
        for (p, g) in self.params.iter_mut().zip(&grads.entries) {
            if let Some(g) = g {
                p.grad.add_assign(g);
            }
        }
    }

    /// Replaces the value of `name`, keeping its shape.
    pub fn set_value(&mut self, name: &str, value: Tensor) -> Result<()> {
        let id = self.find(name).ok_or_else(|| Error::Config(format!("no parameter named {name}")))?;
        let p = self.get_mut(id);
        if p.value.shape() != value.shape() {
            return Err(Error::Shape {
                op: "set_value",
                left: p.value.shape().to_vec(),
                right: value.shape().to_vec(),
            });
        }
        p.value = value;
        Ok(())
    }
}

/// Gradients from one backward pass, indexed by [`ParamId`]. Parameters the
/// root does not depend on have no entry.
#[derive(Clone, Debug)]
pub struct Grads {
    pub(crate) entries: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.entries.get(id.0).and_then(Option::as_ref)
    }

    /// Gradient of `id`, or zeros shaped like its value when unused.
    pub fn get_or_zeros(&self, store: &ParamStore, id: ParamId) -> Tensor {
        self.get(id).cloned().unwrap_or_else(|| Tensor::zeros(store.value(id).shape()))
    }
}
