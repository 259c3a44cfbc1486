//! Shifted-window multi-head self-attention with continuous log-spaced
//! relative position bias, QK-RMSNorm, periodic/non-periodic boundary
//! handling, and channel-wise axial attention for SC token grids.
//!
//! Window partition applies a cyclic roll (the shift), pads grids smaller
//! than the window with masked slots, and everything is expressed as gather
//! plans so the whole path is differentiable.

mod mhsa;
pub mod oracle;
mod relbias;

pub use mhsa::{channel_axial_mhsa, windowed_mhsa, AttnWeights};
pub use relbias::{bias_feature_table, num_offsets, BiasNet};

use std::collections::HashMap;
use std::sync::Arc;

use crate::tensor::{GatherPlan, Graph, Result, Scalar, Tensor, Var};

/// Additive mask value for forbidden attention pairs. Large but finite so the
/// non-finite validator stays meaningful.
pub const MASK_NEG: f64 = -1e30;

#[derive(Debug, Clone, Copy)]
pub struct WindowConfig {
    pub window: usize,
    /// Cyclic shift in tokens; alternating blocks use 0 and window/2.
    pub shift: usize,
    pub num_heads: usize,
    /// Periodicity of (first, second) spatial token axis.
    pub periodic: (bool, bool),
    /// RMSNorm epsilon for Q/K normalization; None disables QK-norm.
    pub qk_norm_eps: Option<f64>,
}

/// Window partition geometry for one (grid, window, shift) combination.
pub struct WindowLayout {
    pub ty: usize,
    pub tx: usize,
    pub window: usize,
    /// Effective per-axis shifts (shift modulo grid extent).
    pub shift_y: usize,
    pub shift_x: usize,
    /// Padded grid in windows.
    pub wy: usize,
    pub wx: usize,
    /// Number of windows and tokens per window.
    pub nw: usize,
    pub n: usize,
    /// Row map `[nw*n] -> ty*tx row or PAD`.
    pub partition_rows: Vec<usize>,
    /// Row map `[ty*tx] -> nw*n position`.
    pub reverse_rows: Vec<usize>,
}

impl WindowLayout {
    pub fn new(ty: usize, tx: usize, window: usize, shift: usize) -> Self {
        let shift_y = if ty > 0 { shift % ty } else { 0 };
        let shift_x = if tx > 0 { shift % tx } else { 0 };
        let wy = ty.div_ceil(window);
        let wx = tx.div_ceil(window);
        let (gy, gx) = (wy * window, wx * window);
        let nw = wy * wx;
        let n = window * window;
        let mut partition_rows = vec![GatherPlan::PAD; nw * n];
        let mut reverse_rows = vec![0usize; ty * tx];
        for ry in 0..gy {
            for rx in 0..gx {
                let win = (ry / window) * wx + rx / window;
                let intra = (ry % window) * window + rx % window;
                let slot = win * n + intra;
                if ry < ty && rx < tx {
                    // rolled coordinate ry holds the token whose original
                    // coordinate is (ry + shift) mod extent
                    let y = (ry + shift_y) % ty;
                    let x = (rx + shift_x) % tx;
                    partition_rows[slot] = y * tx + x;
                    reverse_rows[y * tx + x] = slot;
                }
            }
        }
        WindowLayout {
            ty,
            tx,
            window,
            shift_y,
            shift_x,
            wy,
            wx,
            nw,
            n,
            partition_rows,
            reverse_rows,
        }
    }

    /// Original grid coordinate of a window slot, if it holds a real token.
    pub fn slot_coord(&self, slot: usize) -> Option<(usize, usize)> {
        let row = self.partition_rows[slot];
        if row == GatherPlan::PAD {
            None
        } else {
            Some((row / self.tx, row % self.tx))
        }
    }

    /// True when the token at original coordinate wrapped across the seam
    /// under the cyclic roll of this layout, per axis.
    fn wrapped(&self, y: usize, x: usize) -> (bool, bool) {
        (y < self.shift_y, x < self.shift_x)
    }
}

/// Additive attention mask `[nw, n, n]` (0 or [`MASK_NEG`]).
///
/// Periodic axes need no seam masking (the roll realizes periodicity);
/// non-periodic axes mask pairs that wrapped differently. Padded slots never
/// attend to or from real tokens (a padded query keeps only itself).
pub fn boundary_mask(layout: &WindowLayout, periodic: (bool, bool)) -> Vec<f64> {
    let n = layout.n;
    let mut mask = vec![0.0f64; layout.nw * n * n];
    for win in 0..layout.nw {
        for q in 0..n {
            let q_slot = win * n + q;
            let q_coord = layout.slot_coord(q_slot);
            for k in 0..n {
                let k_slot = win * n + k;
                let k_coord = layout.slot_coord(k_slot);
                let entry = &mut mask[(win * n + q) * n + k];
                match (q_coord, k_coord) {
                    (Some((qy, qx)), Some((ky, kx))) => {
                        let (qwy, qwx) = layout.wrapped(qy, qx);
                        let (kwy, kwx) = layout.wrapped(ky, kx);
                        let seam_y = !periodic.0 && qwy != kwy;
                        let seam_x = !periodic.1 && qwx != kwx;
                        if seam_y || seam_x {
                            *entry = MASK_NEG;
                        }
                    }
                    // padded query attends only itself; padded key is hidden
                    _ => {
                        if q != k {
                            *entry = MASK_NEG;
                        }
                    }
                }
            }
        }
    }
    mask
}

/// Cache for gather plans and masks keyed by geometry; shared across blocks
/// and forward passes of one model.
#[derive(Default)]
pub struct PlanCache {
    plans: HashMap<PlanKey, Arc<GatherPlan>>,
    masks: HashMap<MaskKey, Arc<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum PlanKey {
    Partition { ty: usize, tx: usize, w: usize, shift: usize, width: usize },
    Reverse { ty: usize, tx: usize, w: usize, shift: usize, width: usize },
    HeadSplit { rows: usize, batch: usize, n: usize, heads: usize, hd: usize, which: usize },
    HeadMerge { batch: usize, n: usize, heads: usize, hd: usize },
    TransposeLast { batch: usize, rows: usize, cols: usize },
    BiasTile { nw: usize, heads: usize, window: usize },
    AxialSplit { c: usize, sites: usize, heads: usize, hd: usize, which: usize },
    AxialMerge { c: usize, sites: usize, heads: usize, hd: usize },
    /// Tile one modulation vector slice over all grid sites.
    ModTile { channels: usize, sites: usize, width: usize, k: usize, mult: usize },
    /// Contiguous row range of a `[rows, width]` matrix.
    RowRange { offset: usize, rows: usize, width: usize, total: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct MaskKey {
    ty: usize,
    tx: usize,
    w: usize,
    shift: usize,
    periodic: (bool, bool),
}

impl PlanCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get_or_build(
        &mut self,
        key: PlanKey,
        build: impl FnOnce() -> Result<Arc<GatherPlan>>,
    ) -> Result<Arc<GatherPlan>> {
        if let Some(plan) = self.plans.get(&key) {
            return Ok(plan.clone());
        }
        let plan = build()?;
        self.plans.insert(key, plan.clone());
        Ok(plan)
    }

    fn mask(&mut self, layout: &WindowLayout, periodic: (bool, bool)) -> Arc<Vec<f64>> {
        let key = MaskKey {
            ty: layout.ty,
            tx: layout.tx,
            w: layout.window,
            shift: layout.shift_y.max(layout.shift_x),
            periodic,
        };
        if let Some(m) = self.masks.get(&key) {
            return m.clone();
        }
        let m = Arc::new(boundary_mask(layout, periodic));
        self.masks.insert(key, m.clone());
        m
    }
}

/// Partition a `[ty, tx, d]` token plane into `[nw*n, d]` window rows
/// (cyclic roll, padding with zero rows where the grid is smaller than the
/// window).
pub fn window_partition<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    layout: &WindowLayout,
    cache: &mut PlanCache,
) -> Result<Var> {
    let d = g.value(x).last_dim();
    let plan = cache.get_or_build(
        PlanKey::Partition {
            ty: layout.ty,
            tx: layout.tx,
            w: layout.window,
            shift: layout.shift_y.max(layout.shift_x),
            width: d,
        },
        || {
            GatherPlan::rows(
                &layout.partition_rows,
                layout.ty * layout.tx,
                d,
                vec![layout.nw * layout.n, d],
            )
        },
    )?;
    g.gather(x, plan)
}

/// Undo [`window_partition`]: `[nw*n, d] -> [ty, tx, d]`.
pub fn window_reverse<T: Scalar>(
    g: &mut Graph<T>,
    windows: Var,
    layout: &WindowLayout,
    cache: &mut PlanCache,
) -> Result<Var> {
    let d = g.value(windows).last_dim();
    let plan = cache.get_or_build(
        PlanKey::Reverse {
            ty: layout.ty,
            tx: layout.tx,
            w: layout.window,
            shift: layout.shift_y.max(layout.shift_x),
            width: d,
        },
        || {
            GatherPlan::rows(
                &layout.reverse_rows,
                layout.nw * layout.n,
                d,
                vec![layout.ty, layout.tx, d],
            )
        },
    )?;
    g.gather(windows, plan)
}

pub(crate) fn mask_leaf<T: Scalar>(
    g: &mut Graph<T>,
    layout: &WindowLayout,
    periodic: (bool, bool),
    num_heads: usize,
    cache: &mut PlanCache,
) -> Result<Var> {
    let mask = cache.mask(layout, periodic);
    let n = layout.n;
    let mut data = Vec::with_capacity(layout.nw * num_heads * n * n);
    for win in 0..layout.nw {
        let block = &mask[win * n * n..(win + 1) * n * n];
        for _ in 0..num_heads {
            data.extend(block.iter().map(|&v| T::from_f64(v)));
        }
    }
    g.constant(Tensor::new(vec![layout.nw * num_heads, n, n], data)?)
}
