//! Full training-state checkpoints in the `.pdet-ckpt` container: parameters,
//! optimizer moments, EMA weights, clip state, and step counters, keyed by
//! stable parameter names.

use serde_json::json;
use std::path::Path;

use super::adamw::{AdamW, EmaWeights};
use super::clip::EmaClipState;
use super::{Result, TrainConfig, TrainError};
use crate::fields::{read_archive, write_archive, ArchiveKind};
use crate::model::{FieldTransformer, ModelConfig};
use crate::tensor::{Scalar, Tensor};

pub fn save_checkpoint<T: Scalar>(
    path: impl AsRef<Path>,
    model: &FieldTransformer<T>,
    opt: Option<&AdamW<T>>,
    ema: Option<&EmaWeights<T>>,
    clip: &Option<EmaClipState>,
    step: u64,
    train_cfg: Option<&TrainConfig>,
) -> Result<()> {
    let mut tensors: Vec<(String, Tensor<T>)> = Vec::new();
    for (_, p) in model.store.iter() {
        tensors.push((format!("param/{}", p.name), p.value.clone()));
    }
    if let Some(opt) = opt {
        for (idx, (_, p)) in model.store.iter().enumerate() {
            tensors.push((
                format!("opt_m/{}", p.name),
                Tensor::new(vec![opt.m[idx].len()], opt.m[idx].clone())?,
            ));
            tensors.push((
                format!("opt_v/{}", p.name),
                Tensor::new(vec![opt.v[idx].len()], opt.v[idx].clone())?,
            ));
        }
    }
    if let Some(ema) = ema {
        for (idx, (_, p)) in model.store.iter().enumerate() {
            tensors.push((
                format!("ema/{}", p.name),
                Tensor::new(vec![ema.values[idx].len()], ema.values[idx].clone())?,
            ));
        }
    }
    let meta = json!({
        "model_config": model.config,
        "train_config": train_cfg,
        "step": step,
        "opt_step": opt.map(|o| o.step),
        "clip": clip,
    });
    let refs: Vec<(String, &Tensor<T>)> =
        tensors.iter().map(|(n, t)| (n.clone(), t)).collect();
    write_archive(path, ArchiveKind::Checkpoint, meta, &refs)?;
    Ok(())
}

pub struct LoadedCheckpoint<T: Scalar> {
    pub model: FieldTransformer<T>,
    pub opt: Option<AdamW<T>>,
    pub ema: Option<EmaWeights<T>>,
    pub clip: Option<EmaClipState>,
    pub step: u64,
    pub train_cfg: Option<TrainConfig>,
}

/// Load a checkpoint: rebuild the model from its stored config and restore
/// every tensor by name. Name-set mismatches produce an explicit diff.
pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<LoadedCheckpoint<T>> {
    let (meta, tensors) = read_archive::<T>(path, ArchiveKind::Checkpoint)?;
    let model_config: ModelConfig = serde_json::from_value(meta["model_config"].clone())
        .map_err(|e| TrainError::Config(format!("bad model_config in checkpoint: {e}")))?;
    let train_cfg: Option<TrainConfig> =
        serde_json::from_value(meta["train_config"].clone()).unwrap_or(None);
    let clip: Option<EmaClipState> =
        serde_json::from_value(meta["clip"].clone()).unwrap_or(None);
    let step = meta["step"].as_u64().unwrap_or(0);
    let opt_step = meta["opt_step"].as_u64();

    let mut model = FieldTransformer::<T>::build(model_config, 0)?;

    let mut params = std::collections::HashMap::new();
    let mut opt_m = std::collections::HashMap::new();
    let mut opt_v = std::collections::HashMap::new();
    let mut ema_vals = std::collections::HashMap::new();
    for (name, tensor) in tensors {
        if let Some(rest) = name.strip_prefix("param/") {
            params.insert(rest.to_string(), tensor);
        } else if let Some(rest) = name.strip_prefix("opt_m/") {
            opt_m.insert(rest.to_string(), tensor);
        } else if let Some(rest) = name.strip_prefix("opt_v/") {
            opt_v.insert(rest.to_string(), tensor);
        } else if let Some(rest) = name.strip_prefix("ema/") {
            ema_vals.insert(rest.to_string(), tensor);
        }
    }

    // exact name-set agreement between the checkpoint and the rebuilt model
    let missing: Vec<String> = model
        .store
        .iter()
        .filter(|(_, p)| !params.contains_key(&p.name))
        .map(|(_, p)| p.name.clone())
        .collect();
    let known: std::collections::HashSet<&str> =
        model.store.iter().map(|(_, p)| p.name.as_str()).collect();
    let extra: Vec<String> = params
        .keys()
        .filter(|k| !known.contains(k.as_str()))
        .cloned()
        .collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(TrainError::Mismatch { missing, extra });
    }

    for (_, p) in model.store.iter_mut() {
        let t = params.remove(&p.name).expect("checked above");
        if t.shape() != p.value.shape() {
            return Err(TrainError::Config(format!(
                "parameter {} has shape {:?} in checkpoint, expected {:?}",
                p.name,
                t.shape(),
                p.value.shape()
            )));
        }
        p.value = t;
    }

    let cfg_for_opt = train_cfg.clone().unwrap_or_default();
    let opt = if opt_m.is_empty() {
        None
    } else {
        let mut opt = AdamW::new(
            &model.store,
            cfg_for_opt.lr,
            cfg_for_opt.weight_decay,
            (cfg_for_opt.adam_beta1, cfg_for_opt.adam_beta2),
            cfg_for_opt.adam_eps,
        );
        opt.step = opt_step.unwrap_or(step);
        for (idx, (_, p)) in model.store.iter().enumerate() {
            if let Some(m) = opt_m.get(&p.name) {
                opt.m[idx] = m.data().to_vec();
            }
            if let Some(v) = opt_v.get(&p.name) {
                opt.v[idx] = v.data().to_vec();
            }
        }
        Some(opt)
    };
    let ema = if ema_vals.is_empty() {
        None
    } else {
        let mut ema = EmaWeights::from_store(&model.store, cfg_for_opt.ema_decay);
        for (idx, (_, p)) in model.store.iter().enumerate() {
            if let Some(v) = ema_vals.get(&p.name) {
                ema.values[idx] = v.data().to_vec();
            }
        }
        Some(ema)
    };

    Ok(LoadedCheckpoint {
        model,
        opt,
        ema,
        clip,
        step,
        train_cfg,
    })
}
