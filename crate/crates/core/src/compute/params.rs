//! Named trainable parameters with persistent gradient buffers.

use std::collections::HashMap;

use rand::Rng;

use crate::compute::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(&self) -> usize {
        self.0
    }
}

/// Weight matrices take weight decay; biases do not (unless configured).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
}

#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub trainable: bool,
    pub kind: ParamKind,
}

#[derive(Debug, Default, Clone)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(
        &mut self,
        name: &str,
        value: Tensor,
        kind: ParamKind,
        trainable: bool,
    ) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(Error::Invalid(format!("duplicate parameter name {name:?}")));
        }
        let id = ParamId(self.params.len());
        let grad = Tensor::zeros_like(&value);
        self.params.push(Parameter {
            name: name.to_string(),
            value,
            grad,
            trainable,
            kind,
        });
        self.by_name.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Parameter)> {
        self.params
            .iter_mut()
            .enumerate()
            .map(|(i, p)| (ParamId(i), p))
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }

    /// Adds a backward pass's contributions into the persistent buffers.
    pub fn accumulate(&mut self, grads: &ParamGrads) {
        for (i, g) in grads.by_id.iter().enumerate() {
            if let Some(g) = g {
                let dst = self.params[i].grad.data_mut();
                for (d, s) in dst.iter_mut().zip(g.iter()) {
                    *d += s;
                }
            }
        }
    }

    /// Scalar count over trainable parameters.
    pub fn trainable_scalars(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.len())
            .sum()
    }
}

/// Per-parameter gradients produced by one backward pass.
#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub(crate) by_id: Vec<Option<Vec<f64>>>,
}

impl ParamGrads {
    pub fn empty(store: &ParamStore) -> Self {
        ParamGrads { by_id: vec![None; store.len()] }
    }

    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.by_id[id.0].as_deref()
    }

    pub fn add(&mut self, id: ParamId, len: usize, contrib: &[f64]) {
        let slot = self.by_id[id.0].get_or_insert_with(|| vec![0.0; len]);
        for (d, s) in slot.iter_mut().zip(contrib.iter()) {
            *d += s;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.by_id.iter_mut().flatten() {
            for v in g.iter_mut() {
                *v *= factor;
            }
        }
    }
}

/// Xavier-uniform matrix: limit sqrt(6 / (fan_in + fan_out)).
pub fn xavier_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.gen_range(-limit..=limit))
        .collect();
    Tensor::raw(vec![rows, cols], data)
}
