//! The full surrogate network: patch embedding, a U-shaped stack of
//! shifted-window transformer stages with PixelShuffle token resampling and
//! skip connections, adaLN-Zero conditioning, an optional channel-axial
//! attention sublayer (SC mode), and LoRA adapters for fine-tuning.

pub mod conditioning;
pub mod config;
mod lora;

pub use conditioning::{embed_conditioning, CondIds, Conditioning};
pub use config::{ChannelMode, ModelConfig};
pub use lora::{LoraAdapter, LoraReport};

use std::collections::HashMap;
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::{
    channel_axial_mhsa, windowed_mhsa, AttnWeights, BiasNet, PlanCache, PlanKey, WindowConfig,
};
use crate::params::{init, ParamBinding, ParamId, ParamStore};
use crate::tensor::{GatherPlan, Graph, Result, Scalar, Tensor, TensorError, Var};
use crate::tokens::{patchify_mc, patchify_sc, pixel_shuffle_up, pixel_unshuffle_down, TokenGrid};

#[derive(Debug, Clone, Copy)]
pub struct LinearIds {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

#[derive(Debug, Clone, Copy)]
struct BiasIds {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct AttnIds {
    qkv: LinearIds,
    proj: LinearIds,
    gamma_q: ParamId,
    gamma_k: ParamId,
    /// Windowed attention carries a relative-position bias net; the
    /// channel-axial variant runs without one (channel identity comes from
    /// the conditioning, not from position).
    relbias: Option<BiasIds>,
}

#[derive(Debug, Clone, Copy)]
struct BlockIds {
    attn: AttnIds,
    axial: Option<AttnIds>,
    fc1: LinearIds,
    fc2: LinearIds,
    modulation: LinearIds,
    /// Cyclic window shift for this block (alternates 0, w/2).
    shift: usize,
}

#[derive(Debug, Clone)]
struct StageIds {
    blocks: Vec<BlockIds>,
    width: usize,
}

#[derive(Debug, Clone)]
struct ModelIds {
    embed: LinearIds,
    cond: CondIds,
    stages: Vec<StageIds>,
    downs: Vec<LinearIds>,
    ups: Vec<LinearIds>,
    skips: Vec<LinearIds>,
    head: LinearIds,
}

pub struct FieldTransformer<T: Scalar> {
    pub config: ModelConfig,
    pub store: ParamStore<T>,
    ids: ModelIds,
    cache: Mutex<PlanCache>,
    /// Base-weight param id -> adapter.
    lora: HashMap<usize, LoraAdapter>,
}

struct Builder<'a, T: Scalar> {
    store: &'a mut ParamStore<T>,
    rng: ChaCha8Rng,
}

impl<'a, T: Scalar> Builder<'a, T> {
    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize, bias: bool) -> Result<LinearIds> {
        let w = self.store.insert(
            format!("{name}.weight"),
            init::xavier_uniform(&mut self.rng, fan_in, fan_out),
        )?;
        let b = if bias {
            Some(self.store.insert(format!("{name}.bias"), init::zeros(vec![fan_out]))?)
        } else {
            None
        };
        Ok(LinearIds { w, b })
    }

    fn linear_zero(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Result<LinearIds> {
        let w = self
            .store
            .insert(format!("{name}.weight"), init::zeros(vec![fan_in, fan_out]))?;
        let b = Some(self.store.insert(format!("{name}.bias"), init::zeros(vec![fan_out]))?);
        Ok(LinearIds { w, b })
    }

    fn attn(
        &mut self,
        name: &str,
        width: usize,
        heads: usize,
        qkv_bias: bool,
        rel_hidden: Option<usize>,
    ) -> Result<AttnIds> {
        let qkv = self.linear(&format!("{name}.qkv"), width, 3 * width, qkv_bias)?;
        let proj = self.linear(&format!("{name}.proj"), width, width, true)?;
        let hd = width / heads;
        let gamma_q = self
            .store
            .insert(format!("{name}.gamma_q"), init::ones(vec![hd]))?;
        let gamma_k = self
            .store
            .insert(format!("{name}.gamma_k"), init::ones(vec![hd]))?;
        let relbias = match rel_hidden {
            Some(hidden) => Some(BiasIds {
                w1: self.store.insert(
                    format!("{name}.relbias.w1"),
                    init::xavier_uniform(&mut self.rng, 2, hidden),
                )?,
                b1: self
                    .store
                    .insert(format!("{name}.relbias.b1"), init::zeros(vec![hidden]))?,
                w2: self.store.insert(
                    format!("{name}.relbias.w2"),
                    init::xavier_uniform(&mut self.rng, hidden, heads),
                )?,
                b2: self
                    .store
                    .insert(format!("{name}.relbias.b2"), init::zeros(vec![heads]))?,
            }),
            None => None,
        };
        Ok(AttnIds {
            qkv,
            proj,
            gamma_q,
            gamma_k,
            relbias,
        })
    }
}

impl<T: Scalar> FieldTransformer<T> {
    /// Build a fresh model; two builds from the same seed are bitwise
    /// identical. Every adaLN gate and the output head start at zero, so the
    /// network output is exactly zero.
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut b = Builder {
            store: &mut store,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let dim = config.dim;

        let embed = b.linear("embed", config.embed_features(), dim, true)?;
        let cond = CondIds {
            class_table: b.store.insert(
                "cond.class_table",
                init::normal(&mut b.rng, vec![config.num_pde_classes + 1, dim], 0.02),
            )?,
            channel_table: b.store.insert(
                "cond.channel_table",
                init::normal(&mut b.rng, vec![config.num_channel_types + 1, dim], 0.02),
            )?,
            boundary_table: b.store.insert(
                "cond.boundary_table",
                init::normal(&mut b.rng, vec![4, dim], 0.02),
            )?,
            time_w1: b.store.insert(
                "cond.time.w1",
                init::xavier_uniform(&mut b.rng, conditioning::TIME_FEATURES, dim),
            )?,
            time_b1: b.store.insert("cond.time.b1", init::zeros(vec![dim]))?,
            time_w2: b
                .store
                .insert("cond.time.w2", init::xavier_uniform(&mut b.rng, dim, dim))?,
            time_b2: b.store.insert("cond.time.b2", init::zeros(vec![dim]))?,
        };

        let n_down = config.num_down();
        let n_stages = config.depth.len();
        let level_of = |stage: usize| -> usize {
            if stage <= n_down {
                stage
            } else {
                n_stages - 1 - stage
            }
        };
        let sc = config.mode == ChannelMode::Sc;
        let mod_mult = if sc { 9 } else { 6 };

        let mut stages = Vec::with_capacity(n_stages);
        for (stage, &depth) in config.depth.iter().enumerate() {
            let width = config.width_at(level_of(stage));
            let mut blocks = Vec::with_capacity(depth);
            for blk in 0..depth {
                let prefix = format!("stage{stage}.block{blk}");
                let attn = b.attn(
                    &format!("{prefix}.attn"),
                    width,
                    config.num_heads,
                    config.qkv_bias,
                    Some(config.rel_bias_hidden),
                )?;
                let axial = if sc {
                    Some(b.attn(
                        &format!("{prefix}.axial"),
                        width,
                        config.num_heads,
                        config.qkv_bias,
                        None,
                    )?)
                } else {
                    None
                };
                let hidden = (width as f64 * config.mlp_ratio) as usize;
                let fc1 = b.linear(&format!("{prefix}.mlp.fc1"), width, hidden, true)?;
                let fc2 = b.linear(&format!("{prefix}.mlp.fc2"), hidden, width, true)?;
                let modulation = b.linear_zero(&format!("{prefix}.mod"), dim, mod_mult * width)?;
                blocks.push(BlockIds {
                    attn,
                    axial,
                    fc1,
                    fc2,
                    modulation,
                    shift: if blk % 2 == 0 { 0 } else { config.window_size / 2 },
                });
            }
            stages.push(StageIds { blocks, width });
        }

        let mut downs = Vec::with_capacity(n_down);
        for level in 0..n_down {
            downs.push(b.linear(
                &format!("down{level}.proj"),
                4 * config.width_at(level),
                config.width_at(level + 1),
                true,
            )?);
        }
        let mut ups = Vec::with_capacity(n_down);
        let mut skips = Vec::with_capacity(n_down);
        for i in 0..n_down {
            let level = n_down - i; // current level before upsampling
            ups.push(b.linear(
                &format!("up{i}.proj"),
                config.width_at(level) / 4,
                config.width_at(level - 1),
                true,
            )?);
            skips.push(b.linear(
                &format!("skip{i}.proj"),
                2 * config.width_at(level - 1),
                config.width_at(level - 1),
                true,
            )?);
        }

        let head_out = match config.mode {
            ChannelMode::Mc => config.c_max * config.patch_size * config.patch_size,
            ChannelMode::Sc => config.patch_size * config.patch_size,
        };
        let head = b.linear_zero("head", dim, head_out)?;

        let ids = ModelIds {
            embed,
            cond,
            stages,
            downs,
            ups,
            skips,
            head,
        };
        Ok(FieldTransformer {
            config,
            store,
            ids,
            cache: Mutex::new(PlanCache::new()),
            lora: HashMap::new(),
        })
    }

    /// Weight bound into the graph, with the LoRA delta `(alpha/r) A B`
    /// added when an adapter is attached to this weight.
    fn bound_weight(
        &self,
        g: &mut Graph<T>,
        bind: &mut ParamBinding,
        id: ParamId,
    ) -> Result<Var> {
        let base = bind.var(g, &self.store, id)?;
        match self.lora.get(&id.0) {
            None => Ok(base),
            Some(adapter) => {
                let a = bind.var(g, &self.store, adapter.a)?;
                let bb = bind.var(g, &self.store, adapter.b)?;
                let delta = g.matmul(a, bb)?;
                let delta = g.scale(delta, T::from_f64(adapter.scale))?;
                g.add(base, delta)
            }
        }
    }

    fn linear_on(
        &self,
        g: &mut Graph<T>,
        bind: &mut ParamBinding,
        x: Var,
        ids: &LinearIds,
    ) -> Result<Var> {
        let w = self.bound_weight(g, bind, ids.w)?;
        let mut y = g.matmul(x, w)?;
        if let Some(b) = ids.b {
            let bv = bind.var(g, &self.store, b)?;
            y = g.add_vec(y, bv)?;
        }
        Ok(y)
    }

    fn attn_weights(
        &self,
        g: &mut Graph<T>,
        bind: &mut ParamBinding,
        ids: &AttnIds,
    ) -> Result<(AttnWeights, Option<BiasNet>)> {
        let qkv_w = self.bound_weight(g, bind, ids.qkv.w)?;
        let qkv_b = match ids.qkv.b {
            Some(b) => Some(bind.var(g, &self.store, b)?),
            None => None,
        };
        let proj_w = self.bound_weight(g, bind, ids.proj.w)?;
        let proj_b = match ids.proj.b {
            Some(b) => Some(bind.var(g, &self.store, b)?),
            None => None,
        };
        let (gamma_q, gamma_k) = if self.config.qk_norm {
            (
                Some(bind.var(g, &self.store, ids.gamma_q)?),
                Some(bind.var(g, &self.store, ids.gamma_k)?),
            )
        } else {
            (None, None)
        };
        let bias = match &ids.relbias {
            Some(rb) => Some(BiasNet {
                w1: self.bound_weight(g, bind, rb.w1)?,
                b1: bind.var(g, &self.store, rb.b1)?,
                w2: self.bound_weight(g, bind, rb.w2)?,
                b2: bind.var(g, &self.store, rb.b2)?,
            }),
            None => None,
        };
        Ok((
            AttnWeights {
                qkv_w,
                qkv_b,
                proj_w,
                proj_b,
                gamma_q,
                gamma_k,
            },
            bias,
        ))
    }

    /// Tile modulation slice `k` of `[planes, mult*width]` over grid sites:
    /// result is `[planes*sites, width]`.
    fn mod_tile(
        &self,
        g: &mut Graph<T>,
        mod_out: Var,
        k: usize,
        planes: usize,
        sites: usize,
        width: usize,
        mult: usize,
    ) -> Result<Var> {
        let plan = self.cache.lock().unwrap().get_or_build(
            PlanKey::ModTile {
                channels: planes,
                sites,
                width,
                k,
                mult,
            },
            || {
                let mut idx = Vec::with_capacity(planes * sites * width);
                for ci in 0..planes {
                    for _ in 0..sites {
                        let base = ci * mult * width + k * width;
                        idx.extend(base..base + width);
                    }
                }
                GatherPlan::new(vec![planes * sites, width], planes * mult * width, idx)
            },
        )?;
        g.gather(mod_out, plan)
    }

    fn row_range(
        &self,
        g: &mut Graph<T>,
        x: Var,
        offset: usize,
        rows: usize,
        width: usize,
        total: usize,
        shape: Vec<usize>,
    ) -> Result<Var> {
        let plan = self.cache.lock().unwrap().get_or_build(
            PlanKey::RowRange {
                offset,
                rows,
                width,
                total,
            },
            || GatherPlan::new(shape.clone(), total * width, (offset * width..(offset + rows) * width).collect()),
        )?;
        g.gather(x, plan)
    }

    /// One adaLN-Zero transformer block over a token grid.
    #[allow(clippy::too_many_arguments)]
    fn block(
        &self,
        g: &mut Graph<T>,
        bind: &mut ParamBinding,
        grid: TokenGrid,
        ids: &BlockIds,
        cond_rows: Var,
        periodic: (bool, bool),
    ) -> Result<TokenGrid> {
        let width = grid.dim;
        let planes = grid.channels.unwrap_or(1);
        let sites = grid.num_sites();
        let rows = planes * sites;
        let mult = if ids.axial.is_some() { 9 } else { 6 };

        // regression of all scale/shift/gate vectors from the conditioning
        let silu_c = g.silu(cond_rows)?;
        let mod_out = self.linear_on(g, bind, silu_c, &ids.modulation)?;

        let ones = g.constant(Tensor::filled(vec![width], T::one()))?;
        let zeros = g.constant(Tensor::zeros(vec![width]))?;
        let eps = self.config.ln_eps;

        let x_flat = g.reshape(grid.var, vec![rows, width])?;

        let modulate = |g: &mut Graph<T>, s: &Self, h: Var, k: usize| -> Result<Var> {
            let shift = s.mod_tile(g, mod_out, k, planes, sites, width, mult)?;
            let scale = s.mod_tile(g, mod_out, k + 1, planes, sites, width, mult)?;
            let scale1 = g.add_scalar(scale, T::one())?;
            let scaled = g.mul(h, scale1)?;
            g.add(scaled, shift)
        };

        // windowed attention sublayer
        let (attn_w, bias_net) = self.attn_weights(g, bind, &ids.attn)?;
        let h = g.layernorm(x_flat, ones, zeros, eps)?;
        let h = modulate(g, self, h, 0)?;
        let cfg = WindowConfig {
            window: self.config.window_size,
            shift: ids.shift,
            num_heads: self.config.num_heads,
            periodic,
            qk_norm_eps: self.config.qk_norm.then_some(self.config.rms_eps),
        };
        let mut attn_parts = Vec::with_capacity(planes);
        for ci in 0..planes {
            let plane = if planes == 1 {
                g.reshape(h, vec![grid.ty, grid.tx, width])?
            } else {
                self.row_range(
                    g,
                    h,
                    ci * sites,
                    sites,
                    width,
                    rows,
                    vec![grid.ty, grid.tx, width],
                )?
            };
            let out = {
                let mut cache = self.cache.lock().unwrap();
                windowed_mhsa(g, plane, &cfg, &attn_w, bias_net.as_ref(), &mut cache)?
            };
            attn_parts.push(g.reshape(out, vec![1, sites * width])?);
        }
        let attn_out = if planes == 1 {
            g.reshape(attn_parts[0], vec![rows, width])?
        } else {
            let mut acc = attn_parts[0];
            for part in &attn_parts[1..] {
                acc = g.concat_last(acc, *part)?;
            }
            g.reshape(acc, vec![rows, width])?
        };
        let gate = self.mod_tile(g, mod_out, 2, planes, sites, width, mult)?;
        let gated = g.mul(attn_out, gate)?;
        let mut x = g.add(x_flat, gated)?;

        // channel-axial sublayer (SC only)
        if let Some(axial_ids) = &ids.axial {
            let (ax_w, _) = self.attn_weights(g, bind, axial_ids)?;
            let h = g.layernorm(x, ones, zeros, eps)?;
            let h = modulate(g, self, h, 3)?;
            let h4 = g.reshape(h, vec![planes, grid.ty, grid.tx, width])?;
            let out = {
                let mut cache = self.cache.lock().unwrap();
                channel_axial_mhsa(
                    g,
                    h4,
                    self.config.num_heads,
                    self.config.qk_norm.then_some(self.config.rms_eps),
                    &ax_w,
                    &mut cache,
                )?
            };
            let out = g.reshape(out, vec![rows, width])?;
            let gate = self.mod_tile(g, mod_out, 5, planes, sites, width, mult)?;
            let gated = g.mul(out, gate)?;
            x = g.add(x, gated)?;
        }

        // MLP sublayer
        let k_mlp = mult - 3;
        let h = g.layernorm(x, ones, zeros, eps)?;
        let h = modulate(g, self, h, k_mlp)?;
        let h = self.linear_on(g, bind, h, &ids.fc1)?;
        let h = g.gelu(h)?;
        let h = self.linear_on(g, bind, h, &ids.fc2)?;
        let gate = self.mod_tile(g, mod_out, k_mlp + 2, planes, sites, width, mult)?;
        let gated = g.mul(h, gate)?;
        x = g.add(x, gated)?;

        let out = g.reshape(x, grid.shape())?;
        Ok(TokenGrid { var: out, ..grid })
    }

    fn check_inputs(&self, u_in: &Tensor<T>, x_t: Option<&Tensor<T>>, cond: &Conditioning) -> Result<(usize, usize, usize)> {
        let shape = u_in.shape();
        if shape.len() != 4 {
            return Err(TensorError::Rank {
                op: "forward",
                expected: 4,
                shape: shape.to_vec(),
            });
        }
        let (t, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        if t != self.config.temporal_frames {
            return Err(TensorError::InvalidArg {
                op: "forward",
                msg: format!(
                    "expected {} temporal frames, got {t}",
                    self.config.temporal_frames
                ),
            });
        }
        let multiple = self.config.resolution_multiple();
        if h % multiple != 0 || w % multiple != 0 {
            return Err(TensorError::InvalidArg {
                op: "forward",
                msg: format!(
                    "resolution {h}x{w} must be divisible by patch*2^downsamples = {multiple}"
                ),
            });
        }
        match self.config.mode {
            ChannelMode::Mc => {
                if c > self.config.c_max {
                    return Err(TensorError::InvalidArg {
                        op: "forward",
                        msg: format!("{c} channels exceed c_max {}", self.config.c_max),
                    });
                }
                if !cond.channel_types.is_empty() {
                    return Err(TensorError::InvalidArg {
                        op: "forward",
                        msg: "channel_types conditioning is SC-only".into(),
                    });
                }
            }
            ChannelMode::Sc => {
                if cond.channel_types.len() != c {
                    return Err(TensorError::InvalidArg {
                        op: "forward",
                        msg: format!(
                            "SC mode needs one channel_type per channel: {} labels for {c} channels",
                            cond.channel_types.len()
                        ),
                    });
                }
            }
        }
        match (self.config.diffusion, x_t) {
            (true, Some(xt)) => {
                if xt.shape() != [1, c, h, w] {
                    return Err(TensorError::DimMismatch {
                        op: "forward",
                        lhs: xt.shape().to_vec(),
                        rhs: vec![1, c, h, w],
                    });
                }
            }
            (true, None) => {
                return Err(TensorError::InvalidArg {
                    op: "forward",
                    msg: "diffusion model requires the noisy latent x_t".into(),
                })
            }
            (false, Some(_)) => {
                return Err(TensorError::InvalidArg {
                    op: "forward",
                    msg: "x_t supplied to a supervised-mode model".into(),
                })
            }
            (false, None) => {}
        }
        Ok((c, h, w))
    }

    /// Forward pass on an existing graph (used by training). Returns the
    /// prediction `[1, C, H, W]`: the next snapshot (supervised) or the
    /// flow-matching velocity (diffusion mode).
    pub fn forward_on(
        &self,
        g: &mut Graph<T>,
        bind: &mut ParamBinding,
        u_in: &Tensor<T>,
        x_t: Option<&Tensor<T>>,
        cond: &Conditioning,
    ) -> Result<Var> {
        let (c, h, w) = self.check_inputs(u_in, x_t, cond)?;
        let frames = self.config.embed_frames();

        // assemble input: diffusion appends x_t as an extra frame
        let input = match x_t {
            None => g.constant(u_in.clone())?,
            Some(xt) => {
                let mut data = Vec::with_capacity(frames * c * h * w);
                data.extend_from_slice(u_in.data());
                data.extend_from_slice(xt.data());
                g.constant(Tensor::new(vec![frames, c, h, w], data)?)?
            }
        };

        let cond_rows = embed_conditioning(
            g,
            bind,
            &self.store,
            &self.ids.cond,
            cond,
            self.config.num_pde_classes,
            self.config.num_channel_types,
            self.config.dim,
            self.config.diffusion,
        )?;

        let embed_w = self.bound_weight(g, bind, self.ids.embed.w)?;
        let embed_b = match self.ids.embed.b {
            Some(b) => Some(bind.var(g, &self.store, b)?),
            None => None,
        };
        let p = self.config.patch_size;
        let mut grid = match self.config.mode {
            ChannelMode::Mc => patchify_mc(g, input, self.config.c_max, p, embed_w, embed_b)?,
            ChannelMode::Sc => patchify_sc(g, input, p, embed_w, embed_b)?,
        };

        let n_down = self.config.num_down();
        let periodic = cond.periodic;
        let mut skips: Vec<TokenGrid> = Vec::with_capacity(n_down);
        for level in 0..n_down {
            for ids in &self.ids.stages[level].blocks.clone() {
                grid = self.block(g, bind, grid, ids, cond_rows, periodic)?;
            }
            skips.push(grid);
            let proj = self.ids.downs[level];
            let proj_w = self.bound_weight(g, bind, proj.w)?;
            let proj_b = match proj.b {
                Some(b) => Some(bind.var(g, &self.store, b)?),
                None => None,
            };
            grid = pixel_unshuffle_down(g, &grid, 2, proj_w, proj_b)?;
        }
        for ids in &self.ids.stages[n_down].blocks.clone() {
            grid = self.block(g, bind, grid, ids, cond_rows, periodic)?;
        }
        for i in 0..n_down {
            let proj = self.ids.ups[i];
            let proj_w = self.bound_weight(g, bind, proj.w)?;
            let proj_b = match proj.b {
                Some(b) => Some(bind.var(g, &self.store, b)?),
                None => None,
            };
            grid = pixel_shuffle_up(g, &grid, 2, proj_w, proj_b)?;
            // skip fusion: concatenate same-resolution encoder tokens, then
            // project back to the stage width
            let skip = &skips[n_down - 1 - i];
            let fused = g.concat_last(grid.var, skip.var)?;
            let rows = grid.num_tokens();
            let fused = g.reshape(fused, vec![rows, 2 * grid.dim])?;
            let fused = self.linear_on(g, bind, fused, &self.ids.skips[i])?;
            let fused = g.reshape(fused, grid.shape())?;
            grid = TokenGrid {
                var: fused,
                ..grid
            };
            for ids in &self.ids.stages[n_down + 1 + i].blocks.clone() {
                grid = self.block(g, bind, grid, ids, cond_rows, periodic)?;
            }
        }

        let head_w = self.bound_weight(g, bind, self.ids.head.w)?;
        let head_b = match self.ids.head.b {
            Some(b) => Some(bind.var(g, &self.store, b)?),
            None => None,
        };
        let out = crate::tokens::unpatchify(g, &grid, p, head_w, head_b)?;
        // MC head emits c_max channels; slice down to the live ones
        let out_c = g.value(out).shape()[1];
        if out_c == c {
            Ok(out)
        } else {
            self.row_range(g, out, 0, c * h, w, out_c * h, vec![1, c, h, w])
        }
    }

    /// Standalone forward pass; builds a private graph.
    pub fn forward(
        &self,
        u_in: &Tensor<T>,
        x_t: Option<&Tensor<T>>,
        cond: &Conditioning,
    ) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let mut bind = ParamBinding::new(&self.store);
        let out = self.forward_on(&mut g, &mut bind, u_in, x_t, cond)?;
        Ok(g.value(out).clone())
    }

    pub fn num_params(&self) -> usize {
        self.store.num_elements()
    }

    pub fn num_trainable_params(&self) -> usize {
        self.store.num_trainable_elements()
    }
}
