//! Autoregressive rollout: repeatedly apply a one-step model, feeding each
//! prediction back as the next input, scoring nRMSE against a reference
//! trajectory. Models are pluggable so the harness itself can be validated
//! with identity/zero/solver stand-ins.

use super::nrmse::nrmse_pair;
use super::sampler::{euler_sample, SamplerConfig};
use super::{EvalError, Result};
use crate::fields::{NormStats, Snapshot, Trajectory};
use crate::model::{ChannelMode, Conditioning, FieldTransformer};
use crate::spectral::{self, SolverSpec};
use crate::tensor::{Scalar, Tensor};

/// One autoregressive step in physical units: `[f, x, y] -> [f, x, y]`.
pub trait StepModel {
    fn step(&mut self, current: &Tensor<f32>, step_index: usize) -> Result<Tensor<f32>>;
}

/// The trained network as a step model: normalizes the input, runs one
/// forward pass (supervised) or one posterior sample (diffusion), and
/// denormalizes the prediction.
pub struct NetworkModel<'m, T: Scalar> {
    pub model: &'m FieldTransformer<T>,
    pub stats: NormStats,
    pub cond: Conditioning,
    /// Present iff the model runs in diffusion mode.
    pub sampler: Option<SamplerConfig>,
}

impl<'m, T: Scalar> NetworkModel<'m, T> {
    pub fn new(
        model: &'m FieldTransformer<T>,
        stats: NormStats,
        cond: Conditioning,
        sampler: Option<SamplerConfig>,
    ) -> Result<Self> {
        if model.config.diffusion != sampler.is_some() {
            return Err(EvalError::Other(
                "sampler configuration must match the model's diffusion mode".into(),
            ));
        }
        Ok(NetworkModel {
            model,
            stats,
            cond,
            sampler,
        })
    }
}

impl<'m, T: Scalar> StepModel for NetworkModel<'m, T> {
    fn step(&mut self, current: &Tensor<f32>, step_index: usize) -> Result<Tensor<f32>> {
        let shape = current.shape();
        let (f, x, y) = (shape[0], shape[1], shape[2]);
        let per_field = x * y;
        // normalize into model space
        let mut data = Vec::with_capacity(current.numel());
        for fi in 0..f {
            let mean = self.stats.mean[fi];
            let std = self.stats.guarded_std(fi);
            for &v in &current.values_block(fi, per_field) {
                data.push(T::from_f64((v as f64 - mean) / std));
            }
        }
        let u_in = Tensor::new(vec![1, f, x, y], data)?;
        let pred = match &self.sampler {
            None => self.model.forward(&u_in, None, &self.cond)?,
            Some(cfg) => euler_sample(self.model, &u_in, &self.cond, cfg, step_index as u64)?,
        };
        // back to physical units
        let mut out = Vec::with_capacity(pred.numel());
        for fi in 0..f {
            let mean = self.stats.mean[fi];
            let std = self.stats.guarded_std(fi);
            for &v in &pred.data()[fi * per_field..(fi + 1) * per_field] {
                out.push((v.as_f64() * std + mean) as f32);
            }
        }
        Ok(Tensor::new(vec![f, x, y], out)?)
    }
}

trait FieldBlock {
    fn values_block(&self, field: usize, per_field: usize) -> Vec<f32>;
}

impl FieldBlock for Tensor<f32> {
    fn values_block(&self, field: usize, per_field: usize) -> Vec<f32> {
        self.data()[field * per_field..(field + 1) * per_field].to_vec()
    }
}

/// The spectral solver itself wrapped as a step model; the reference
/// predictor for harness-correctness tests.
pub struct SolverOracleModel {
    pub spec: SolverSpec,
}

impl StepModel for SolverOracleModel {
    fn step(&mut self, current: &Tensor<f32>, _step_index: usize) -> Result<Tensor<f32>> {
        let shape = current.shape();
        let (f, x, y) = (shape[0], shape[1], shape[2]);
        let fields: Vec<Vec<f64>> = (0..f)
            .map(|fi| {
                current.data()[fi * x * y..(fi + 1) * x * y]
                    .iter()
                    .map(|&v| v as f64)
                    .collect()
            })
            .collect();
        let mut spec = self.spec.clone();
        spec.steps = 2;
        spec.warmup_steps = 0;
        let traj = spectral::simulate_from(&spec, fields)?;
        Ok(traj.snapshots[1].values.clone())
    }
}

/// Identity dynamics: predicts the input (exact on steady states).
pub struct IdentityModel;

impl StepModel for IdentityModel {
    fn step(&mut self, current: &Tensor<f32>, _step_index: usize) -> Result<Tensor<f32>> {
        Ok(current.clone())
    }
}

/// Always predicts zero.
pub struct ZeroModel;

impl StepModel for ZeroModel {
    fn step(&mut self, current: &Tensor<f32>, _step_index: usize) -> Result<Tensor<f32>> {
        Ok(Tensor::zeros(current.shape().to_vec()))
    }
}

#[derive(Debug, Clone)]
pub struct RolloutResult {
    /// Predicted snapshots, one per rollout step (physical units).
    pub predicted: Vec<Tensor<f32>>,
    /// nRMSE against the reference per step (1.0 beyond truncation);
    /// empty when no reference was supplied.
    pub nrmse_series: Vec<f64>,
    /// Step at which a non-finite prediction stopped the rollout.
    pub truncated_at: Option<usize>,
}

impl RolloutResult {
    pub fn nrmse_at(&self, horizon: usize) -> Option<f64> {
        self.nrmse_series.get(horizon - 1).copied()
    }
}

/// Roll a model forward `steps` times from `initial`, scoring each step
/// against `reference.snapshots[k+1]` when a reference is given. Non-finite
/// predictions truncate the rollout; truncated steps score worst-case 1.0.
pub fn rollout(
    model: &mut dyn StepModel,
    initial: &Snapshot,
    reference: Option<&Trajectory>,
    steps: usize,
) -> Result<RolloutResult> {
    assert!(steps >= 1, "rollout needs at least one step");
    if let Some(r) = reference {
        if r.len() < steps + 1 {
            return Err(EvalError::Other(format!(
                "reference holds {} snapshots, need {} for {steps} steps",
                r.len(),
                steps + 1
            )));
        }
    }
    let mut current = initial.values.clone();
    let mut predicted = Vec::with_capacity(steps);
    let mut series = Vec::with_capacity(steps);
    let mut truncated_at = None;
    for k in 0..steps {
        if truncated_at.is_none() {
            let next = model.step(&current, k)?;
            if next.first_non_finite().is_some() {
                truncated_at = Some(k);
            } else {
                if let Some(r) = reference {
                    let reference_values = &r.snapshots[k + 1].values;
                    series.push(nrmse_pair(next.data(), reference_values.data(), k)?);
                }
                predicted.push(next.clone());
                current = next;
                continue;
            }
        }
        // beyond truncation: score worst case, keep a zero placeholder
        if reference.is_some() {
            series.push(1.0);
        }
        predicted.push(Tensor::zeros(current.shape().to_vec()));
    }
    Ok(RolloutResult {
        predicted,
        nrmse_series: series,
        truncated_at,
    })
}

/// Network rollout in one call, building the conditioning from trajectory
/// metadata.
pub fn rollout_network<T: Scalar>(
    model: &FieldTransformer<T>,
    stats: &NormStats,
    reference: &Trajectory,
    steps: usize,
    sampler: Option<SamplerConfig>,
) -> Result<RolloutResult> {
    let cond = conditioning_for(model, reference);
    let mut net = NetworkModel::new(model, stats.clone(), cond, sampler)?;
    rollout(&mut net, &reference.snapshots[0], Some(reference), steps)
}

/// Conditioning derived from trajectory metadata for the given model mode.
pub fn conditioning_for<T: Scalar>(
    model: &FieldTransformer<T>,
    traj: &Trajectory,
) -> Conditioning {
    let pde_class = crate::spectral::PdeKind::from_name(&traj.meta.pde)
        .map(|k| k.class_id())
        .ok();
    let channel_types = match model.config.mode {
        ChannelMode::Sc => traj
            .field_types()
            .iter()
            .map(|k| Some(k.label_id()))
            .collect(),
        ChannelMode::Mc => Vec::new(),
    };
    Conditioning {
        pde_class,
        channel_types,
        diffusion_time: None,
        periodic: traj.meta.periodic,
    }
}
