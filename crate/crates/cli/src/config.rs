//! Run configuration: a TOML file with sections mirroring the library
//! configs, overridable by command-line flags. Every run directory receives
//! the fully resolved copy, so a run is reproducible from that file alone.

use serde::{Deserialize, Serialize};

use pdet_core::model::{ChannelMode, ModelConfig};
use pdet_core::training::{ClipVariant, Objective, TrainConfig};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: String,
    /// "f32" (default) or "f64".
    #[serde(default = "default_precision")]
    pub precision: String,
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainSection,
}

fn default_precision() -> String {
    "f32".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataSection {
    pub dataset: String,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default)]
    pub split_seed: u64,
}

fn default_train_fraction() -> f64 {
    (5.0 / 6.0) * 0.85
}

fn default_val_fraction() -> f64 {
    (5.0 / 6.0) * 0.15
}

fn default_test_fraction() -> f64 {
    1.0 / 6.0
}

impl DataSection {
    pub fn fractions(&self) -> (f64, f64, f64) {
        (self.train_fraction, self.val_fraction, self.test_fraction)
    }
}

/// Model settings: a preset name plus optional field overrides.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSection {
    #[serde(default = "default_preset")]
    pub preset: String,
    pub mode: Option<String>,
    pub c_max: Option<usize>,
    pub patch_size: Option<usize>,
    pub window_size: Option<usize>,
    pub num_heads: Option<usize>,
    pub dim: Option<usize>,
    pub depth: Option<Vec<usize>>,
    pub rel_bias_hidden: Option<usize>,
}

fn default_preset() -> String {
    "TEST".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSection {
    pub lr: Option<f64>,
    pub weight_decay: Option<f64>,
    pub micro_batch: Option<usize>,
    pub accumulation_steps: Option<usize>,
    pub epochs: Option<usize>,
    pub max_steps: Option<usize>,
    pub ema_decay: Option<f64>,
    /// "mse" or "flow-matching".
    pub objective: Option<String>,
    pub sigma_min: Option<f64>,
    pub label_dropout: Option<f64>,
    /// "corrected", "literal", or "off".
    pub clip: Option<String>,
    pub checkpoint_every: Option<usize>,
}

impl RunConfig {
    /// Validate and build the library configs; collects every problem
    /// instead of stopping at the first.
    pub fn resolve(&self) -> Result<(ModelConfig, TrainConfig), Vec<String>> {
        let mut errors = Vec::new();

        let mut model = match ModelConfig::preset(&self.model.preset) {
            Some(m) => m,
            None => {
                errors.push(format!(
                    "model.preset: unknown preset {:?} (expected S, B, L, or TEST)",
                    self.model.preset
                ));
                ModelConfig::test()
            }
        };
        if let Some(mode) = &self.model.mode {
            match mode.as_str() {
                "mc" => model.mode = ChannelMode::Mc,
                "sc" => model.mode = ChannelMode::Sc,
                other => errors.push(format!("model.mode: {other:?} is not one of mc, sc")),
            }
        }
        if let Some(v) = self.model.c_max {
            model.c_max = v;
        }
        if let Some(v) = self.model.patch_size {
            model.patch_size = v;
        }
        if let Some(v) = self.model.window_size {
            model.window_size = v;
        }
        if let Some(v) = self.model.num_heads {
            model.num_heads = v;
        }
        if let Some(v) = self.model.dim {
            model.dim = v;
        }
        if let Some(v) = &self.model.depth {
            model.depth = v.clone();
        }
        if let Some(v) = self.model.rel_bias_hidden {
            model.rel_bias_hidden = v;
        }

        let mut train = TrainConfig {
            seed: self.seed,
            ..TrainConfig::default()
        };
        let t = &self.train;
        if let Some(v) = t.lr {
            train.lr = v;
        }
        if let Some(v) = t.weight_decay {
            train.weight_decay = v;
        }
        if let Some(v) = t.micro_batch {
            train.micro_batch = v;
        }
        if let Some(v) = t.accumulation_steps {
            train.accumulation_steps = v;
        }
        if let Some(v) = t.epochs {
            train.epochs = v;
        }
        if let Some(v) = t.max_steps {
            train.max_steps = Some(v);
        }
        if let Some(v) = t.ema_decay {
            train.ema_decay = v;
        }
        if let Some(v) = t.sigma_min {
            train.sigma_min = v;
        }
        if let Some(v) = t.label_dropout {
            train.label_dropout = v;
        }
        match t.objective.as_deref() {
            None | Some("mse") => train.objective = Objective::Mse,
            Some("flow-matching") => {
                train.objective = Objective::FlowMatching;
                model.diffusion = true;
            }
            Some(other) => errors.push(format!(
                "train.objective: {other:?} is not one of mse, flow-matching"
            )),
        }
        match t.clip.as_deref() {
            None | Some("corrected") => train.clip = Some(ClipVariant::Corrected),
            Some("literal") => train.clip = Some(ClipVariant::Literal),
            Some("off") => train.clip = None,
            Some(other) => errors.push(format!(
                "train.clip: {other:?} is not one of corrected, literal, off"
            )),
        }

        match self.precision.as_str() {
            "f32" | "f64" => {}
            other => errors.push(format!(
                "precision: {other:?} is not one of f32, f64"
            )),
        }
        let fr = self.data.fractions();
        if fr.0 <= 0.0 || fr.0 > 1.0 || fr.1 < 0.0 || fr.2 < 0.0 || fr.0 + fr.1 + fr.2 > 1.0 + 1e-9
        {
            errors.push(format!(
                "data fractions (train={}, val={}, test={}): each in [0,1], train > 0, sum <= 1",
                fr.0, fr.1, fr.2
            ));
        }
        if let Err(e) = model.validate() {
            errors.push(format!("model: {e}"));
        }
        if let Err(e) = train.validate() {
            errors.push(format!("train: {e}"));
        }
        if errors.is_empty() {
            Ok((model, train))
        } else {
            Err(errors)
        }
    }
}
