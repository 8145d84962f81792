//! Named parameter storage shared by the model, the optimizer and checkpoints.

use std::ops::Index;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::{Graph, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Whether decoupled weight decay applies to a parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decay {
    /// Projection and convolution weights.
    Apply,
    /// Biases and normalization affines.
    Skip,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub tensor: Tensor,
    pub decay: Decay,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor, decay: Decay) -> ParamId {
        self.entries.push(ParamEntry {
            name: name.into(),
            tensor,
            decay,
        });
        ParamId(self.entries.len() - 1)
    }

    /// Kaiming-normal weight, `std = sqrt(2 / fan_in)`.
    pub fn kaiming(&mut self, name: impl Into<String>, shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> ParamId {
        let tensor = kaiming_normal(shape, fan_in, rng);
        self.add(name, tensor, Decay::Apply)
    }

    pub fn zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::zeros(shape), Decay::Skip)
    }

    pub fn ones(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::ones(shape), Decay::Skip)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].tensor
    }

    pub fn tensor_mut(&mut self, index: usize) -> &mut Tensor {
        &mut self.entries[index].tensor
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.numel()).sum()
    }

    /// Records every parameter as a trainable leaf of `g`.
    pub fn bind(&self, g: &mut Graph) -> Bindings {
        Bindings(self.entries.iter().map(|e| g.param(e.tensor.clone())).collect())
    }

    /// Records every parameter as a constant (inference; no gradients kept).
    pub fn bind_frozen(&self, g: &mut Graph) -> Bindings {
        Bindings(self.entries.iter().map(|e| g.constant(e.tensor.clone())).collect())
    }
}

/// Graph handles for one forward pass, indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Bindings(Vec<Var>);

impl Bindings {
    /// Wraps handles already recorded in store order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self(vars)
    }

    /// Gradients in store order; parameters the loss never touched get zeros.
    pub fn grads(&self, g: &Graph, store: &ParamStore) -> Vec<Tensor> {
        self.0
            .iter()
            .zip(store.entries())
            .map(|(&v, e)| g.grad(v).unwrap_or_else(|| Tensor::zeros(e.tensor.shape())))
            .collect()
    }
}

impl Index<ParamId> for Bindings {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.0[id.0]
    }
}

pub fn kaiming_normal(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let std = (2.0 / fan_in.max(1) as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("finite std");
    Tensor::from_fn(shape, |_| normal.sample(rng))
}
