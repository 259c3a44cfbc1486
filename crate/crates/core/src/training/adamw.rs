//! AdamW with decoupled weight decay, plus the evaluation-time EMA of the
//! model weights.

use crate::params::ParamStore;
use crate::tensor::{Scalar, Tensor};

/// Aligned per-parameter gradient accumulator (store id order).
pub struct GradAccum<T> {
    pub data: Vec<Vec<T>>,
}

impl<T: Scalar> GradAccum<T> {
    pub fn zeros(store: &ParamStore<T>) -> Self {
        GradAccum {
            data: store
                .iter()
                .map(|(_, p)| vec![T::zero(); p.value.numel()])
                .collect(),
        }
    }

    /// Accumulate `weight * grads` (per-sample gradients from one backward).
    pub fn add(&mut self, grads: &[Option<Tensor<T>>], weight: T) {
        for (slot, g) in self.data.iter_mut().zip(grads) {
            if let Some(g) = g {
                for (a, &b) in slot.iter_mut().zip(g.data()) {
                    *a = *a + b * weight;
                }
            }
        }
    }

    /// Global L2 norm over trainable parameters.
    pub fn global_norm(&self, store: &ParamStore<T>) -> f64 {
        let mut sq = 0.0f64;
        for ((_, p), slot) in store.iter().zip(&self.data) {
            if p.trainable {
                for &v in slot {
                    let x = v.as_f64();
                    sq += x * x;
                }
            }
        }
        sq.sqrt()
    }

    pub fn scale(&mut self, factor: T) {
        for slot in &mut self.data {
            for v in slot {
                *v = *v * factor;
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamW<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(store: &ParamStore<T>, lr: f64, weight_decay: f64, betas: (f64, f64), eps: f64) -> Self {
        let zeros = || -> Vec<Vec<T>> {
            store
                .iter()
                .map(|(_, p)| vec![T::zero(); p.value.numel()])
                .collect()
        };
        AdamW {
            lr,
            beta1: betas.0,
            beta2: betas.1,
            eps,
            weight_decay,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One decoupled-weight-decay Adam step over all trainable parameters.
    pub fn apply(&mut self, store: &mut ParamStore<T>, grads: &GradAccum<T>) {
        self.step += 1;
        let b1 = T::from_f64(self.beta1);
        let b2 = T::from_f64(self.beta2);
        let one = T::one();
        let bc1 = T::from_f64(1.0 - self.beta1.powi(self.step as i32));
        let bc2 = T::from_f64(1.0 - self.beta2.powi(self.step as i32));
        let lr = T::from_f64(self.lr);
        let wd = T::from_f64(self.weight_decay);
        let eps = T::from_f64(self.eps);
        for (idx, (_, p)) in store.iter_mut().enumerate() {
            if !p.trainable {
                continue;
            }
            let g = &grads.data[idx];
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            for ((w, &gi), (mi, vi)) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(g)
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mi = b1 * *mi + (one - b1) * gi;
                *vi = b2 * *vi + (one - b2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *w = *w - lr * (m_hat / (v_hat.sqrt() + eps) + wd * *w);
            }
        }
    }
}

/// Exponential moving average of the weights, updated after every optimizer
/// step and used for all reported evaluations.
#[derive(Debug, Clone)]
pub struct EmaWeights<T> {
    pub decay: f64,
    pub values: Vec<Vec<T>>,
}

impl<T: Scalar> EmaWeights<T> {
    pub fn from_store(store: &ParamStore<T>, decay: f64) -> Self {
        EmaWeights {
            decay,
            values: store.iter().map(|(_, p)| p.value.data().to_vec()).collect(),
        }
    }

    pub fn update(&mut self, store: &ParamStore<T>) {
        let d = T::from_f64(self.decay);
        let one_minus = T::from_f64(1.0 - self.decay);
        for (slot, (_, p)) in self.values.iter_mut().zip(store.iter()) {
            for (e, &w) in slot.iter_mut().zip(p.value.data()) {
                *e = d * *e + one_minus * w;
            }
        }
    }

    /// Overwrite the store's values with the averaged weights.
    pub fn write_into(&self, store: &mut ParamStore<T>) {
        for (slot, (_, p)) in self.values.iter().zip(store.iter_mut()) {
            p.value.data_mut().copy_from_slice(slot);
        }
    }
}
