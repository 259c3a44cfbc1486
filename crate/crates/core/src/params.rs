//! Named parameter storage shared by model construction, the optimizer, and
//! the checkpoint container. Names are stable dotted paths
//! (`"stage0.block1.attn.qkv.weight"`) and double as the wire contract.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Graph, Result, Scalar, Tensor, TensorError, Var};

/// Index of a parameter within its [`ParamStore`]; stable for the lifetime of
/// the store. Layers hold ids, not names, after build.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    /// Frozen parameters (e.g. base weights under a LoRA adapter) keep their
    /// values but receive no optimizer updates.
    pub trainable: bool,
}

#[derive(Debug, Clone)]
pub struct ParamStore<T> {
    entries: Vec<Parameter<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(TensorError::InvalidArg {
                op: "param_insert",
                msg: format!("duplicate parameter name {name:?}"),
            });
        }
        let id = self.entries.len();
        self.index.insert(name.clone(), id);
        self.entries.push(Parameter {
            name,
            value,
            trainable: true,
        });
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.entries[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.entries[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.entries.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Parameter<T>)> {
        self.entries
            .iter_mut()
            .enumerate()
            .map(|(i, p)| (ParamId(i), p))
    }

    /// Total number of scalar elements across all parameters.
    pub fn num_elements(&self) -> usize {
        self.entries.iter().map(|p| p.value.numel()).sum()
    }

    pub fn num_trainable_elements(&self) -> usize {
        self.entries
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.numel())
            .sum()
    }
}

/// Lazily binds store parameters into one [`Graph`] as grad-requiring leaves,
/// so repeated use of a parameter within a forward pass shares a single node.
pub struct ParamBinding {
    vars: Vec<Option<Var>>,
}

impl ParamBinding {
    pub fn new<T: Scalar>(store: &ParamStore<T>) -> Self {
        ParamBinding {
            vars: vec![None; store.len()],
        }
    }

    pub fn var<T: Scalar>(
        &mut self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        id: ParamId,
    ) -> Result<Var> {
        if let Some(v) = self.vars[id.0] {
            return Ok(v);
        }
        let p = store.get(id);
        let v = g.leaf(p.value.clone(), p.trainable)?;
        self.vars[id.0] = Some(v);
        Ok(v)
    }

    /// Gradients for every bound parameter, aligned with store ids.
    pub fn grads<T: Scalar>(&self, g: &Graph<T>) -> Vec<Option<Tensor<T>>> {
        self.vars
            .iter()
            .map(|slot| slot.and_then(|v| g.grad(v).cloned()))
            .collect()
    }
}

/// Weight initializers. All draws go through a caller-provided ChaCha stream
/// so that two builds from the same seed are bitwise identical.
pub mod init {
    use super::*;

    pub fn zeros<T: Scalar>(shape: Vec<usize>) -> Tensor<T> {
        Tensor::zeros(shape)
    }

    pub fn ones<T: Scalar>(shape: Vec<usize>) -> Tensor<T> {
        Tensor::filled(shape, T::one())
    }

    /// Xavier/Glorot uniform for a `[fan_in, fan_out]` weight matrix.
    pub fn xavier_uniform<T: Scalar>(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Tensor<T> {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| T::from_f64(rng.gen_range(-bound..bound)))
            .collect();
        Tensor::new(vec![fan_in, fan_out], data).expect("shape/data consistent")
    }

    pub fn normal<T: Scalar>(rng: &mut ChaCha8Rng, shape: Vec<usize>, std: f64) -> Tensor<T> {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| T::from_f64(f64::sample_standard_normal(rng) * std))
            .collect();
        Tensor::new(shape, data).expect("shape/data consistent")
    }
}
