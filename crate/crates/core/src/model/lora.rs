//! Low-rank adaptation: `y = W0 x + (alpha/r) B A x` realized as a weight
//! reparameterization `W0 + (alpha/r) A' B'` at bind time (row-vector
//! convention). Attaching freezes every base parameter; only the adapters
//! train. `B' = 0` at attach time, so outputs are bitwise unchanged.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::FieldTransformer;
use crate::params::{init, ParamId};
use crate::tensor::{Result, Scalar, TensorError};

#[derive(Debug, Clone, Copy)]
pub struct LoraAdapter {
    /// `[fan_in, rank]`, Gaussian init.
    pub a: ParamId,
    /// `[rank, fan_out]`, zero init.
    pub b: ParamId,
    /// alpha / rank.
    pub scale: f64,
}

#[derive(Debug, Clone)]
pub struct LoraReport {
    pub adapted: Vec<String>,
    /// Total trainable elements added: sum of r*(fan_in + fan_out).
    pub trainable_added: usize,
}

impl<T: Scalar> FieldTransformer<T> {
    /// Attach adapters of the given rank to every rank-2 `.weight` parameter
    /// whose name contains one of `targets`. `alpha` defaults to the rank
    /// when `None` (scaling factor 1).
    pub fn attach_lora(
        &mut self,
        rank: usize,
        alpha: Option<f64>,
        targets: &[&str],
        seed: u64,
    ) -> Result<LoraReport> {
        if rank == 0 {
            return Err(TensorError::InvalidArg {
                op: "attach_lora",
                msg: "rank must be >= 1".into(),
            });
        }
        if targets.is_empty() {
            return Err(TensorError::InvalidArg {
                op: "attach_lora",
                msg: "no target layer patterns given".into(),
            });
        }
        let alpha = alpha.unwrap_or(rank as f64);
        let matches: Vec<(ParamId, String, usize, usize)> = self
            .store
            .iter()
            .filter(|(_, p)| {
                p.value.rank() == 2
                    && p.name.ends_with(".weight")
                    && targets.iter().any(|t| p.name.contains(t))
            })
            .map(|(id, p)| (id, p.name.clone(), p.value.shape()[0], p.value.shape()[1]))
            .collect();
        for t in targets {
            if !matches.iter().any(|(_, name, _, _)| name.contains(t)) {
                return Err(TensorError::InvalidArg {
                    op: "attach_lora",
                    msg: format!("target layer pattern {t:?} matched no linear weight"),
                });
            }
        }

        // freeze the whole base model; only adapters train
        for (_, p) in self.store.iter_mut() {
            p.trainable = false;
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut report = LoraReport {
            adapted: Vec::new(),
            trainable_added: 0,
        };
        for (id, name, fan_in, fan_out) in matches {
            let a = self.store.insert(
                format!("{name}.lora_a"),
                init::normal(&mut rng, vec![fan_in, rank], 0.02),
            )?;
            let b = self
                .store
                .insert(format!("{name}.lora_b"), init::zeros(vec![rank, fan_out]))?;
            self.lora.insert(
                id.0,
                LoraAdapter {
                    a,
                    b,
                    scale: alpha / rank as f64,
                },
            );
            report.trainable_added += rank * (fan_in + fan_out);
            report.adapted.push(name);
        }
        Ok(report)
    }

    pub fn lora_adapters(&self) -> usize {
        self.lora.len()
    }
}
