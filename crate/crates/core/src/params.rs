//! Named parameter storage, tape binding and the SGD-momentum optimizer.
//!
//! Names follow `stage.index.role`, e.g. `conv.2.weight` or
//! `fusion.3.mix_logits`. Architecture logits (`*.mix_logits`,
//! `*.edge_logits`) form the φ group, everything else is θ.

use std::collections::BTreeMap;

use rand::Rng;

use crate::rng::truncated_normal;
use crate::tensor::{Tape, Tensor, Var};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamGroup {
    Weight,
    Architecture,
}

pub fn group_of(name: &str) -> ParamGroup {
    if name.ends_with("mix_logits") || name.ends_with("edge_logits") {
        ParamGroup::Architecture
    } else {
        ParamGroup::Weight
    }
}

pub type Grads = BTreeMap<String, Tensor>;

#[derive(Clone, Debug, Default, PartialEq)]
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

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name).ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
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

    /// Records every parameter as a leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        let vars = self
            .tensors
            .iter()
            .map(|(name, t)| (name.clone(), tape.leaf(t.clone(), true)))
            .collect();
        BoundParams { vars }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(Tensor::all_finite)
    }
}

#[derive(Clone, Debug)]
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl BoundParams {
    /// Binds parameter names to existing tape variables.
    pub fn from_vars(vars: impl IntoIterator<Item = (String, Var)>) -> Self {
        Self {
            vars: vars.into_iter().collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    /// Gradients after `tape.backward`; parameters that did not take part in
    /// the loss get zeros.
    pub fn grads(&self, tape: &Tape) -> Grads {
        self.vars
            .iter()
            .map(|(name, &v)| {
                let g = tape
                    .grad(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(tape.shape(v)));
                (name.clone(), g)
            })
            .collect()
    }
}

/// Truncated-normal tensor with He scaling, `std = sqrt(2 / fan_in)`.
pub fn truncated_normal_tensor<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], fan_in: usize) -> Tensor {
    let std = (2.0 / fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape, |_| truncated_normal(rng, std))
}

/// Momentum SGD with L2 weight decay, applied uniformly to θ and φ:
/// `v ← μ·v + (g + λ·p)`, `p ← p − η·v`.
#[derive(Clone, Debug)]
pub struct SgdMomentum {
    pub learning_rate: f64,
    pub momentum: f64,
    pub l2: f64,
    velocity: BTreeMap<String, Tensor>,
}

impl SgdMomentum {
    pub fn new(learning_rate: f64, momentum: f64, l2: f64) -> Self {
        Self {
            learning_rate,
            momentum,
            l2,
            velocity: BTreeMap::new(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads) -> Result<()> {
        for (name, grad) in grads {
            let param = store
                .get_mut(name)
                .ok_or_else(|| Error::MissingParam(name.clone()))?;
            if param.shape() != grad.shape() {
                return Err(Error::ParamMismatch(format!(
                    "gradient for `{name}` has shape {:?}, parameter {:?}",
                    grad.shape(),
                    param.shape()
                )));
            }
            let velocity = self
                .velocity
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(grad.shape()));
            for ((v, p), g) in velocity
                .data_mut()
                .iter_mut()
                .zip(param.data_mut().iter_mut())
                .zip(grad.data())
            {
                *v = self.momentum * *v + g + self.l2 * *p;
                *p -= self.learning_rate * *v;
            }
        }
        Ok(())
    }
}
