//! Supervised and flow-matching training: deterministic batch scheduling,
//! per-sample gradient accumulation to an effective batch, EMA gradient
//! clipping, AdamW updates, weight EMA, and full-state checkpoints. Every
//! stochastic draw derives from (seed, purpose, step, sample), so a fixed
//! seed reproduces the loss trajectory bitwise and resume is exact.

mod adamw;
mod checkpoint;
pub mod clip;
pub mod loss;

pub use adamw::{AdamW, EmaWeights, GradAccum};
pub use checkpoint::{load_checkpoint, save_checkpoint, LoadedCheckpoint};
pub use clip::{ClipDecision, ClipVariant, EmaClipState};
pub use loss::{flow_sample, loss_flow_matching, loss_supervised};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fields::{DatasetSplit, FieldsError, NormStats, Trajectory};
use crate::model::{ChannelMode, Conditioning, FieldTransformer};
use crate::params::ParamBinding;
use crate::spectral::PdeKind;
use crate::tensor::{Graph, Scalar, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Fields(#[from] FieldsError),
    #[error("checkpoint/model mismatch: missing {missing:?}, unexpected {extra:?}")]
    Mismatch {
        missing: Vec<String>,
        extra: Vec<String>,
    },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("non-finite loss at step {step} (value {value})")]
    NonFiniteLoss { step: u64, value: f64 },
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    Mse,
    FlowMatching,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Samples per backward chunk; memory scales with this.
    pub micro_batch: usize,
    /// Chunks accumulated into one optimizer step.
    pub accumulation_steps: usize,
    pub epochs: usize,
    /// Hard cap on optimizer steps (handy at desk scale).
    pub max_steps: Option<usize>,
    pub ema_decay: f64,
    pub objective: Objective,
    pub sigma_min: f64,
    pub label_dropout: f64,
    /// None disables gradient clipping.
    pub clip: Option<ClipVariant>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 4.0e-5,
            weight_decay: 1e-15,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            micro_batch: 8,
            accumulation_steps: 32,
            epochs: 100,
            max_steps: None,
            ema_decay: 0.999,
            objective: Objective::Mse,
            sigma_min: 1e-4,
            label_dropout: 0.1,
            clip: Some(ClipVariant::Corrected),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn effective_batch(&self) -> usize {
        self.micro_batch * self.accumulation_steps
    }

    pub fn total_steps(&self, n_samples: usize) -> usize {
        let per_epoch = (n_samples / self.effective_batch()).max(1);
        let by_epochs = self.epochs * per_epoch;
        match self.max_steps {
            Some(cap) => by_epochs.min(cap),
            None => by_epochs,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.micro_batch == 0 || self.accumulation_steps == 0 {
            return Err(TrainError::Config(
                "micro_batch and accumulation_steps must be >= 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.label_dropout) {
            return Err(TrainError::Config(format!(
                "label_dropout {} outside [0,1]",
                self.label_dropout
            )));
        }
        if self.lr <= 0.0 || self.ema_decay < 0.0 || self.ema_decay >= 1.0 {
            return Err(TrainError::Config(
                "lr must be > 0 and ema_decay in [0,1)".into(),
            ));
        }
        Ok(())
    }
}

/// Derive an independent ChaCha stream from the run seed and a purpose path
/// (e.g. [tag, step, sample]).
pub fn derive_rng(seed: u64, words: &[u64]) -> ChaCha8Rng {
    fn splitmix(mut x: u64) -> u64 {
        x = x.wrapping_add(0x9E3779B97F4A7C15);
        let mut z = x;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^ (z >> 31)
    }
    let mut state = splitmix(seed);
    for &w in words {
        state = splitmix(state ^ w);
    }
    let mut key = [0u8; 32];
    for chunk in key.chunks_mut(8) {
        state = splitmix(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

mod rng_tags {
    pub const SHUFFLE: u64 = 1;
    pub const DROPOUT: u64 = 2;
    pub const FLOW: u64 = 3;
    pub const SAMPLER: u64 = 4;
}

/// Normalized training view over a dataset: train-split trajectories only,
/// with (trajectory, step) pairs as samples. Statistics are computed from
/// the same train-only view, so nothing leaks from val/test.
pub struct TrainSet {
    trajectories: Vec<Trajectory>,
    pairs: Vec<(usize, usize)>,
    pub stats: NormStats,
    pub pde_class: Option<usize>,
    pub periodic: (bool, bool),
}

impl TrainSet {
    pub fn new(all: &[Trajectory], split: &DatasetSplit) -> Result<Self> {
        let stats = NormStats::from_train_split(all, split)?;
        let mut trajectories = Vec::with_capacity(split.train.len());
        for &i in &split.train {
            trajectories.push(crate::fields::normalize::normalize(&all[i], &stats)?);
        }
        let mut pairs = Vec::new();
        for (ti, traj) in trajectories.iter().enumerate() {
            for t in 0..traj.len().saturating_sub(1) {
                pairs.push((ti, t));
            }
        }
        if pairs.is_empty() {
            return Err(TrainError::Config(
                "training split holds no transition pairs".into(),
            ));
        }
        let first = &trajectories[0];
        let pde_class = PdeKind::from_name(&first.meta.pde)
            .map(|k| k.class_id())
            .ok();
        Ok(TrainSet {
            periodic: first.meta.periodic,
            pde_class,
            trajectories,
            pairs,
            stats,
        })
    }

    pub fn num_pairs(&self) -> usize {
        self.pairs.len()
    }

    pub fn resolution(&self) -> (usize, usize) {
        self.trajectories[0].resolution()
    }

    pub fn num_fields(&self) -> usize {
        self.trajectories[0].num_fields()
    }

    fn pair_tensors<T: Scalar>(&self, pair: usize) -> (Tensor<T>, Tensor<T>) {
        let (ti, t) = self.pairs[pair];
        let traj = &self.trajectories[ti];
        let to_t = |snap: &crate::fields::Snapshot| {
            let (x, y) = snap.resolution();
            let data = snap.values.data().iter().map(|&v| T::from_f64(v as f64)).collect();
            Tensor::new(vec![1, snap.num_fields(), x, y], data).expect("shape consistent")
        };
        (to_t(&traj.snapshots[t]), to_t(&traj.snapshots[t + 1]))
    }

    fn channel_labels(&self, pair: usize) -> Vec<usize> {
        let (ti, _) = self.pairs[pair];
        self.trajectories[ti]
            .field_types()
            .iter()
            .map(|k| k.label_id())
            .collect()
    }
}

/// Deterministic shuffled schedule over sample pairs; epoch orders are pure
/// functions of (seed, epoch), so any global position can be recomputed.
pub struct Schedule {
    n: usize,
    seed: u64,
    cached_epoch: u64,
    order: Vec<usize>,
}

impl Schedule {
    pub fn new(n: usize, seed: u64) -> Self {
        let mut s = Schedule {
            n,
            seed,
            cached_epoch: u64::MAX,
            order: Vec::new(),
        };
        s.ensure_epoch(0);
        s
    }

    fn ensure_epoch(&mut self, epoch: u64) {
        if self.cached_epoch != epoch {
            let mut order: Vec<usize> = (0..self.n).collect();
            order.shuffle(&mut derive_rng(self.seed, &[rng_tags::SHUFFLE, epoch]));
            self.order = order;
            self.cached_epoch = epoch;
        }
    }

    pub fn sample(&mut self, global: u64) -> usize {
        let epoch = global / self.n as u64;
        self.ensure_epoch(epoch);
        self.order[(global % self.n as u64) as usize]
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct StepMetrics {
    pub step: u64,
    pub loss: f64,
    pub grad_norm: f64,
    pub clipped: bool,
}

pub struct Trainer<'m, T: Scalar> {
    pub model: &'m mut FieldTransformer<T>,
    pub cfg: TrainConfig,
    pub opt: AdamW<T>,
    pub ema: EmaWeights<T>,
    pub clip: Option<EmaClipState>,
    pub step: u64,
}

/// Label dropout decision for a (step, sample, which-label) tuple.
pub fn dropout_draw(seed: u64, step: u64, sample: u64, which: u64, rate: f64) -> bool {
    derive_rng(seed, &[rng_tags::DROPOUT, step, sample, which]).gen_range(0.0..1.0) < rate
}

impl<'m, T: Scalar> Trainer<'m, T> {
    pub fn new(model: &'m mut FieldTransformer<T>, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let diffusion = cfg.objective == Objective::FlowMatching;
        if model.config.diffusion != diffusion {
            return Err(TrainError::Config(format!(
                "objective {:?} requires model diffusion = {diffusion}, but config has {}",
                cfg.objective, model.config.diffusion
            )));
        }
        let opt = AdamW::new(
            &model.store,
            cfg.lr,
            cfg.weight_decay,
            (cfg.adam_beta1, cfg.adam_beta2),
            cfg.adam_eps,
        );
        let ema = EmaWeights::from_store(&model.store, cfg.ema_decay);
        let clip = cfg.clip.map(EmaClipState::new);
        Ok(Trainer {
            model,
            cfg,
            opt,
            ema,
            clip,
            step: 0,
        })
    }

    fn sample_conditioning(&self, data: &TrainSet, pair: usize, step: u64, slot: u64) -> (Conditioning, Option<f64>) {
        let sc = self.model.config.mode == ChannelMode::Sc;
        let drop = |which: u64| {
            dropout_draw(self.cfg.seed, step, slot, which, self.cfg.label_dropout)
        };
        let pde_class = if drop(0) { None } else { data.pde_class };
        let channel_types: Vec<Option<usize>> = if sc {
            data.channel_labels(pair)
                .into_iter()
                .enumerate()
                .map(|(ci, id)| if drop(1 + ci as u64) { None } else { Some(id) })
                .collect()
        } else {
            Vec::new()
        };
        let t = if self.cfg.objective == Objective::FlowMatching {
            Some(derive_rng(self.cfg.seed, &[rng_tags::FLOW, step, slot]).gen_range(0.0..1.0))
        } else {
            None
        };
        (
            Conditioning {
                pde_class,
                channel_types,
                diffusion_time: t,
                periodic: data.periodic,
            },
            t,
        )
    }

    /// One optimizer step over a full effective batch.
    pub fn run_step(&mut self, data: &TrainSet, schedule: &mut Schedule) -> Result<StepMetrics> {
        let batch = self.cfg.effective_batch();
        let weight = T::from_f64(1.0 / batch as f64);
        let mut accum = GradAccum::zeros(&self.model.store);
        let mut loss_sum = 0.0f64;
        let step = self.step;

        for chunk_start in (0..batch).step_by(self.cfg.micro_batch) {
            let chunk_end = (chunk_start + self.cfg.micro_batch).min(batch);
            let slots: Vec<u64> = (chunk_start as u64..chunk_end as u64).collect();
            let picks: Vec<usize> = slots
                .iter()
                .map(|&j| schedule.sample(step * batch as u64 + j))
                .collect();
            // per-sample forward/backward in parallel, folded in slot order
            let results: Vec<Result<(f64, Vec<Option<Tensor<T>>>)>> = slots
                .par_iter()
                .zip(&picks)
                .map(|(&slot, &pair)| {
                    let (u_in, u_out) = data.pair_tensors::<T>(pair);
                    let (cond, t) = self.sample_conditioning(data, pair, step, slot);
                    let mut g = Graph::new();
                    let mut bind = ParamBinding::new(&self.model.store);
                    let loss = match self.cfg.objective {
                        Objective::Mse => loss_supervised(
                            &mut g, self.model, &mut bind, &u_in, &cond, &u_out,
                        )?,
                        Objective::FlowMatching => {
                            let mut rng =
                                derive_rng(self.cfg.seed, &[rng_tags::SAMPLER, step, slot]);
                            let eps_data: Vec<T> = (0..u_out.numel())
                                .map(|_| T::sample_standard_normal(&mut rng))
                                .collect();
                            let eps = Tensor::new(u_out.shape().to_vec(), eps_data)?;
                            let _ = t;
                            loss_flow_matching(
                                &mut g,
                                self.model,
                                &mut bind,
                                &u_in,
                                &cond,
                                &u_out,
                                &eps,
                                self.cfg.sigma_min,
                            )?
                        }
                    };
                    g.backward(loss)?;
                    Ok((g.value(loss).item().as_f64(), bind.grads(&g)))
                })
                .collect();
            for r in results {
                let (l, grads) = r?;
                loss_sum += l / batch as f64;
                accum.add(&grads, weight);
            }
        }

        if !loss_sum.is_finite() {
            return Err(TrainError::NonFiniteLoss {
                step,
                value: loss_sum,
            });
        }

        let grad_norm = accum.global_norm(&self.model.store);
        let mut clipped = false;
        if let Some(clip) = &mut self.clip {
            let decision = clip.process(grad_norm);
            if decision.scale != 1.0 {
                accum.scale(T::from_f64(decision.scale));
            }
            clipped = decision.clipped;
        }
        self.opt.apply(&mut self.model.store, &accum);
        self.ema.update(&self.model.store);
        self.step += 1;
        Ok(StepMetrics {
            step,
            loss: loss_sum,
            grad_norm,
            clipped,
        })
    }

    /// Run `n` optimizer steps, reporting metrics per step.
    pub fn train(
        &mut self,
        data: &TrainSet,
        n: usize,
        on_step: &mut dyn FnMut(StepMetrics),
    ) -> Result<()> {
        let mut schedule = Schedule::new(data.num_pairs(), self.cfg.seed);
        for _ in 0..n {
            let metrics = self.run_step(data, &mut schedule)?;
            on_step(metrics);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
