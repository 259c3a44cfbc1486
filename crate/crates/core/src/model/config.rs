//! Model configuration: size presets S/B/L (token dims 96/192/384, shared
//! 7-stage layout) plus a tiny TEST preset for fast correctness checks.

use serde::{Deserialize, Serialize};

use crate::tensor::TensorError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelMode {
    /// Mixed channels: all physical channels share one token lattice,
    /// zero-padded to `c_max`.
    Mc,
    /// Separate channels: one token lattice per channel, coupled only by
    /// channel-wise axial attention.
    Sc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub name: String,
    /// Token embedding dimension at the finest stage.
    pub dim: usize,
    /// Blocks per stage; odd length: encoders, bottleneck, decoders.
    pub depth: Vec<usize>,
    pub num_heads: usize,
    pub mlp_ratio: f64,
    pub window_size: usize,
    pub patch_size: usize,
    pub class_dropout_prob: f64,
    pub qkv_bias: bool,
    pub mode: ChannelMode,
    /// Maximum physical channels in MC mode (inputs are zero-padded up to it).
    pub c_max: usize,
    pub num_pde_classes: usize,
    pub num_channel_types: usize,
    /// Temporal input frames per sample.
    pub temporal_frames: usize,
    /// Flow-matching mode: the noisy latent is appended as an extra input
    /// frame and diffusion time conditions the blocks.
    pub diffusion: bool,
    /// Stage width = dim * 2^min(level, width_cap_exp).
    pub width_cap_exp: u32,
    pub rel_bias_hidden: usize,
    pub qk_norm: bool,
    pub ln_eps: f64,
    pub rms_eps: f64,
}

impl ModelConfig {
    fn base(name: &str, dim: usize) -> Self {
        ModelConfig {
            name: name.to_string(),
            dim,
            depth: vec![2, 4, 4, 6, 4, 4, 2],
            num_heads: 16,
            mlp_ratio: 4.0,
            window_size: 8,
            patch_size: 4,
            class_dropout_prob: 0.1,
            qkv_bias: true,
            mode: ChannelMode::Mc,
            c_max: 2,
            num_pde_classes: 16,
            num_channel_types: crate::fields::FieldKind::ALL.len(),
            temporal_frames: 1,
            diffusion: false,
            width_cap_exp: 2,
            rel_bias_hidden: 512,
            qk_norm: true,
            ln_eps: 1e-6,
            rms_eps: 1e-6,
        }
    }

    pub fn small() -> Self {
        Self::base("S", 96)
    }

    pub fn big() -> Self {
        Self::base("B", 192)
    }

    pub fn large() -> Self {
        Self::base("L", 384)
    }

    /// Micro configuration for tests and desk-scale training runs; not a
    /// published size.
    pub fn test() -> Self {
        let mut cfg = Self::base("TEST", 16);
        cfg.depth = vec![1, 1, 1];
        cfg.num_heads = 4;
        cfg.window_size = 4;
        cfg.rel_bias_hidden = 32;
        cfg
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name.to_ascii_uppercase().as_str() {
            "S" => Some(Self::small()),
            "B" => Some(Self::big()),
            "L" => Some(Self::large()),
            "TEST" => Some(Self::test()),
            _ => None,
        }
    }

    /// Number of down/up-sampling levels (encoder stages).
    pub fn num_down(&self) -> usize {
        self.depth.len() / 2
    }

    /// Token width at a resolution level (0 = finest).
    pub fn width_at(&self, level: usize) -> usize {
        self.dim * (1usize << (level as u32).min(self.width_cap_exp))
    }

    /// Input frames seen by the patch embedding (x_t appended in diffusion
    /// mode).
    pub fn embed_frames(&self) -> usize {
        self.temporal_frames + usize::from(self.diffusion)
    }

    /// Patch-embedding input features per token.
    pub fn embed_features(&self) -> usize {
        let p2 = self.patch_size * self.patch_size;
        match self.mode {
            ChannelMode::Mc => self.embed_frames() * self.c_max * p2,
            ChannelMode::Sc => self.embed_frames() * p2,
        }
    }

    /// Smallest input resolution divisor: patch * 2^num_down.
    pub fn resolution_multiple(&self) -> usize {
        self.patch_size * (1 << self.num_down())
    }

    pub fn validate(&self) -> Result<(), TensorError> {
        let fail = |msg: String| TensorError::InvalidArg {
            op: "model_config",
            msg,
        };
        if self.depth.len() % 2 == 0 || self.depth.is_empty() {
            return Err(fail(format!(
                "depth list must have odd length (encoders, bottleneck, decoders), got {:?}",
                self.depth
            )));
        }
        for level in 0..=self.num_down() {
            let w = self.width_at(level);
            if w % self.num_heads != 0 {
                return Err(fail(format!(
                    "stage width {w} at level {level} not divisible by {} heads",
                    self.num_heads
                )));
            }
            if level > 0 && self.width_at(level) % 4 != 0 {
                return Err(fail(format!("stage width {w} not divisible by 4")));
            }
        }
        if self.patch_size == 0 || self.window_size == 0 {
            return Err(fail("patch and window sizes must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.class_dropout_prob) {
            return Err(fail(format!(
                "class_dropout_prob {} outside [0,1]",
                self.class_dropout_prob
            )));
        }
        if self.c_max == 0 || self.temporal_frames == 0 {
            return Err(fail("c_max and temporal_frames must be >= 1".into()));
        }
        Ok(())
    }
}
