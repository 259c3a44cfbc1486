//! Conditioning inputs and their embedding: PDE-class label, per-channel
//! type labels (SC), diffusion time, and boundary flags. All embeddings are
//! summed into one vector per conditioning target; dropped labels map to a
//! learned null row so the model works unconditionally too.

use crate::params::{ParamBinding, ParamId, ParamStore};
use crate::tensor::{GatherPlan, Graph, Result, Scalar, Tensor, TensorError, Var};

/// Runtime conditioning for one sample. `None` labels mean "dropped":
/// the learned unconditional embedding is used.
#[derive(Debug, Clone, PartialEq)]
pub struct Conditioning {
    pub pde_class: Option<usize>,
    /// Per-channel type labels; must match the channel count in SC mode and
    /// stay empty in MC mode.
    pub channel_types: Vec<Option<usize>>,
    /// Flow-matching time in [0,1]; required iff the model is in diffusion
    /// mode.
    pub diffusion_time: Option<f64>,
    pub periodic: (bool, bool),
}

impl Conditioning {
    pub fn unconditional(periodic: (bool, bool)) -> Self {
        Conditioning {
            pde_class: None,
            channel_types: Vec::new(),
            diffusion_time: None,
            periodic,
        }
    }
}

/// Parameter ids of the conditioning embedders.
#[derive(Debug, Clone)]
pub struct CondIds {
    /// `[num_classes + 1, dim]`; last row is the null (dropped) embedding.
    pub class_table: ParamId,
    /// `[num_channel_types + 1, dim]`.
    pub channel_table: ParamId,
    /// `[4, dim]` indexed by periodic flag pair.
    pub boundary_table: ParamId,
    pub time_w1: ParamId,
    pub time_b1: ParamId,
    pub time_w2: ParamId,
    pub time_b2: ParamId,
}

pub const TIME_FEATURES: usize = 256;

/// Sinusoidal features of the diffusion time (DiT-style frequency ladder).
pub fn time_features<T: Scalar>(t: f64) -> Tensor<T> {
    let half = TIME_FEATURES / 2;
    let mut data = Vec::with_capacity(TIME_FEATURES);
    for i in 0..half {
        let freq = (-(10000f64.ln()) * i as f64 / half as f64).exp();
        data.push(T::from_f64((t * freq).cos()));
    }
    for i in 0..half {
        let freq = (-(10000f64.ln()) * i as f64 / half as f64).exp();
        data.push(T::from_f64((t * freq).sin()));
    }
    Tensor::new(vec![1, TIME_FEATURES], data).expect("fixed size")
}

fn table_row<T: Scalar>(
    g: &mut Graph<T>,
    table: Var,
    row: usize,
    rows: usize,
    dim: usize,
) -> Result<Var> {
    if row >= rows {
        return Err(TensorError::InvalidArg {
            op: "embed_conditioning",
            msg: format!("label id {row} outside vocabulary of {rows}"),
        });
    }
    let plan = GatherPlan::new(
        vec![1, dim],
        rows * dim,
        (row * dim..(row + 1) * dim).collect(),
    )?;
    g.gather(table, plan)
}

/// Embed the conditioning into `[targets, dim]`: one row in MC mode, one row
/// per channel in SC mode (shared part plus the channel-type embedding).
#[allow(clippy::too_many_arguments)]
pub fn embed_conditioning<T: Scalar>(
    g: &mut Graph<T>,
    bind: &mut ParamBinding,
    store: &ParamStore<T>,
    ids: &CondIds,
    cond: &Conditioning,
    num_classes: usize,
    num_channel_types: usize,
    dim: usize,
    diffusion: bool,
) -> Result<Var> {
    let class_table = bind.var(g, store, ids.class_table)?;
    let class_row = cond.pde_class.unwrap_or(num_classes);
    let mut shared = table_row(g, class_table, class_row, num_classes + 1, dim)?;

    let boundary_table = bind.var(g, store, ids.boundary_table)?;
    let b_idx = (cond.periodic.0 as usize) * 2 + cond.periodic.1 as usize;
    let b_row = table_row(g, boundary_table, b_idx, 4, dim)?;
    shared = g.add(shared, b_row)?;

    if diffusion {
        let t = cond.diffusion_time.ok_or_else(|| TensorError::InvalidArg {
            op: "embed_conditioning",
            msg: "diffusion model requires diffusion_time".into(),
        })?;
        let feats = g.constant(time_features::<T>(t))?;
        let w1 = bind.var(g, store, ids.time_w1)?;
        let b1 = bind.var(g, store, ids.time_b1)?;
        let w2 = bind.var(g, store, ids.time_w2)?;
        let b2 = bind.var(g, store, ids.time_b2)?;
        let h = g.matmul(feats, w1)?;
        let h = g.add_vec(h, b1)?;
        let h = g.silu(h)?;
        let h = g.matmul(h, w2)?;
        let t_emb = g.add_vec(h, b2)?;
        shared = g.add(shared, t_emb)?;
    } else if cond.diffusion_time.is_some() {
        return Err(TensorError::InvalidArg {
            op: "embed_conditioning",
            msg: "diffusion_time supplied to a supervised-mode model".into(),
        });
    }

    if cond.channel_types.is_empty() {
        return Ok(shared);
    }

    // SC: stack per-channel rows, each shared + channel-type embedding
    let channel_table = bind.var(g, store, ids.channel_table)?;
    let mut rows: Option<Var> = None;
    for label in &cond.channel_types {
        let row_idx = label.unwrap_or(num_channel_types);
        let ch = table_row(g, channel_table, row_idx, num_channel_types + 1, dim)?;
        let combined = g.add(shared, ch)?;
        rows = Some(match rows {
            None => combined,
            Some(acc) => {
                // stack along rows: [k, dim] + [1, dim] -> [k+1, dim]
                let k = g.value(acc).leading();
                let acc_flat = g.reshape(acc, vec![1, k * dim])?;
                let comb_flat = g.reshape(combined, vec![1, dim])?;
                let cat = g.concat_last(acc_flat, comb_flat)?;
                g.reshape(cat, vec![k + 1, dim])?
            }
        });
    }
    Ok(rows.expect("non-empty channel list"))
}
