//! Multi-head self-attention kernels over window batches and over the
//! channel axis. Head splitting/merging and bias tiling are gather plans so
//! the whole computation stays on the tape.

use std::sync::Arc;

use super::relbias::{num_offsets, offset_index, BiasNet};
use super::{mask_leaf, PlanCache, PlanKey, WindowConfig, WindowLayout};
use crate::tensor::{GatherPlan, Graph, Result, Scalar, TensorError, Var};

/// Projection weights of one attention layer. `qkv_w` is `[d, 3d]` (query,
/// key, value blocks along the output axis), `proj_w` is `[d, d]`.
#[derive(Debug, Clone, Copy)]
pub struct AttnWeights {
    pub qkv_w: Var,
    pub qkv_b: Option<Var>,
    pub proj_w: Var,
    pub proj_b: Option<Var>,
    /// RMSNorm gains over head_dim for Q and K (QK-norm).
    pub gamma_q: Option<Var>,
    pub gamma_k: Option<Var>,
}

fn head_split_plan(
    cache: &mut PlanCache,
    rows: usize,
    batch: usize,
    n: usize,
    heads: usize,
    hd: usize,
    which: usize,
) -> Result<Arc<GatherPlan>> {
    let d = heads * hd;
    cache.get_or_build(
        PlanKey::HeadSplit { rows, batch, n, heads, hd, which },
        || {
            let mut idx = Vec::with_capacity(batch * heads * n * hd);
            for b in 0..batch {
                for h in 0..heads {
                    for i in 0..n {
                        let row = b * n + i;
                        let base = row * 3 * d + which * d + h * hd;
                        idx.extend(base..base + hd);
                    }
                }
            }
            GatherPlan::new(vec![batch * heads, n, hd], rows * 3 * d, idx)
        },
    )
}

fn head_merge_plan(
    cache: &mut PlanCache,
    batch: usize,
    n: usize,
    heads: usize,
    hd: usize,
) -> Result<Arc<GatherPlan>> {
    cache.get_or_build(PlanKey::HeadMerge { batch, n, heads, hd }, || {
        let d = heads * hd;
        let mut idx = Vec::with_capacity(batch * n * d);
        for b in 0..batch {
            for i in 0..n {
                for h in 0..heads {
                    let base = ((b * heads + h) * n + i) * hd;
                    idx.extend(base..base + hd);
                }
            }
        }
        GatherPlan::new(vec![batch * n, d], batch * heads * n * hd, idx)
    })
}

fn transpose_last_plan(
    cache: &mut PlanCache,
    batch: usize,
    rows: usize,
    cols: usize,
) -> Result<Arc<GatherPlan>> {
    cache.get_or_build(PlanKey::TransposeLast { batch, rows, cols }, || {
        let mut idx = Vec::with_capacity(batch * rows * cols);
        for b in 0..batch {
            for c in 0..cols {
                for r in 0..rows {
                    idx.push((b * rows + r) * cols + c);
                }
            }
        }
        GatherPlan::new(vec![batch, cols, rows], batch * rows * cols, idx)
    })
}

/// Tile the bias table `[(2w-1)^2, heads]` into logits layout
/// `[nw*heads, n, n]`.
fn bias_tile_plan(
    cache: &mut PlanCache,
    layout: &WindowLayout,
    heads: usize,
) -> Result<Arc<GatherPlan>> {
    let w = layout.window;
    let (nw, n) = (layout.nw, layout.n);
    cache.get_or_build(PlanKey::BiasTile { nw, heads, window: w }, || {
        let mut idx = Vec::with_capacity(nw * heads * n * n);
        for _ in 0..nw {
            for h in 0..heads {
                for q in 0..n {
                    let (qy, qx) = ((q / w) as i64, (q % w) as i64);
                    for k in 0..n {
                        let (ky, kx) = ((k / w) as i64, (k % w) as i64);
                        let off = offset_index(w, qy - ky, qx - kx);
                        idx.push(off * heads + h);
                    }
                }
            }
        }
        GatherPlan::new(vec![nw * heads, n, n], num_offsets(w) * heads, idx)
    })
}

/// Scaled dot-product attention over a `[batch, n, hd]` head layout with an
/// optional additive `[batch, n, n]` term (mask and/or bias, pre-combined).
fn attention_core<T: Scalar>(
    g: &mut Graph<T>,
    q: Var,
    k: Var,
    v: Var,
    additive: Option<Var>,
    cache: &mut PlanCache,
) -> Result<Var> {
    let shape = g.value(q).shape().to_vec();
    let (batch, n, hd) = (shape[0], shape[1], shape[2]);
    let kt_plan = transpose_last_plan(cache, batch, n, hd)?;
    let kt = g.gather(k, kt_plan)?;
    let logits = g.bmm(q, kt)?;
    let scale = T::from_f64(1.0 / (hd as f64).sqrt());
    let mut logits = g.scale(logits, scale)?;
    if let Some(a) = additive {
        logits = g.add(logits, a)?;
    }
    let attn = g.softmax(logits)?;
    g.bmm(attn, v)
}

/// Windowed multi-head self-attention over one `[ty, tx, d]` token plane:
/// roll, partition, per-window attention with relative bias and boundary
/// mask, merge, unroll. Input and output are `[ty, tx, d]`.
pub fn windowed_mhsa<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    cfg: &WindowConfig,
    weights: &AttnWeights,
    bias: Option<&BiasNet>,
    cache: &mut PlanCache,
) -> Result<Var> {
    let shape = g.value(x).shape().to_vec();
    if shape.len() != 3 {
        return Err(TensorError::Rank {
            op: "windowed_mhsa",
            expected: 3,
            shape,
        });
    }
    let (ty, tx, d) = (shape[0], shape[1], shape[2]);
    let heads = cfg.num_heads;
    if d % heads != 0 {
        return Err(TensorError::InvalidArg {
            op: "windowed_mhsa",
            msg: format!("width {d} not divisible by {heads} heads"),
        });
    }
    let hd = d / heads;
    let layout = WindowLayout::new(ty, tx, cfg.window, cfg.shift);
    let (nw, n) = (layout.nw, layout.n);

    let windows = super::window_partition(g, x, &layout, cache)?;
    let mut qkv = g.matmul(windows, weights.qkv_w)?;
    if let Some(b) = weights.qkv_b {
        qkv = g.add_vec(qkv, b)?;
    }
    let rows = nw * n;
    let q_plan = head_split_plan(cache, rows, nw, n, heads, hd, 0)?;
    let k_plan = head_split_plan(cache, rows, nw, n, heads, hd, 1)?;
    let v_plan = head_split_plan(cache, rows, nw, n, heads, hd, 2)?;
    let mut q = g.gather(qkv, q_plan)?;
    let mut k = g.gather(qkv, k_plan)?;
    let v = g.gather(qkv, v_plan)?;
    if let Some(eps) = cfg.qk_norm_eps {
        let gq = weights.gamma_q.ok_or(TensorError::InvalidArg {
            op: "windowed_mhsa",
            msg: "qk_norm enabled but gamma_q missing".into(),
        })?;
        let gk = weights.gamma_k.ok_or(TensorError::InvalidArg {
            op: "windowed_mhsa",
            msg: "qk_norm enabled but gamma_k missing".into(),
        })?;
        q = g.rmsnorm(q, gq, eps)?;
        k = g.rmsnorm(k, gk, eps)?;
    }

    // additive term: relative position bias (tiled over windows) plus the
    // boundary/pad mask (tiled over heads)
    let mask = mask_leaf(g, &layout, cfg.periodic, heads, cache)?;
    let additive = match bias {
        Some(net) => {
            let table = net.table(g, cfg.window)?;
            let tile = bias_tile_plan(cache, &layout, heads)?;
            let b = g.gather(table, tile)?;
            Some(g.add(b, mask)?)
        }
        None => Some(mask),
    };

    let ctx = attention_core(g, q, k, v, additive, cache)?;
    let merge = head_merge_plan(cache, nw, n, heads, hd)?;
    let merged = g.gather(ctx, merge)?;
    let mut out = g.matmul(merged, weights.proj_w)?;
    if let Some(b) = weights.proj_b {
        out = g.add_vec(out, b)?;
    }
    super::window_reverse(g, out, &layout, cache)
}

fn axial_split_plan(
    cache: &mut PlanCache,
    c: usize,
    sites: usize,
    heads: usize,
    hd: usize,
    which: usize,
) -> Result<Arc<GatherPlan>> {
    let d = heads * hd;
    cache.get_or_build(
        PlanKey::AxialSplit { c, sites, heads, hd, which },
        || {
            let mut idx = Vec::with_capacity(sites * heads * c * hd);
            for s in 0..sites {
                for h in 0..heads {
                    for ci in 0..c {
                        let row = ci * sites + s;
                        let base = row * 3 * d + which * d + h * hd;
                        idx.extend(base..base + hd);
                    }
                }
            }
            GatherPlan::new(vec![sites * heads, c, hd], c * sites * 3 * d, idx)
        },
    )
}

fn axial_merge_plan(
    cache: &mut PlanCache,
    c: usize,
    sites: usize,
    heads: usize,
    hd: usize,
) -> Result<Arc<GatherPlan>> {
    cache.get_or_build(PlanKey::AxialMerge { c, sites, heads, hd }, || {
        let d = heads * hd;
        let mut idx = Vec::with_capacity(c * sites * d);
        for ci in 0..c {
            for s in 0..sites {
                for h in 0..heads {
                    let base = ((s * heads + h) * c + ci) * hd;
                    idx.extend(base..base + hd);
                }
            }
        }
        GatherPlan::new(vec![c * sites, d], sites * heads * c * hd, idx)
    })
}

/// Channel-wise axial attention for SC token grids `[c, ty, tx, d]`:
/// attention runs over the channel axis independently at every grid site
/// (no positional bias; channel identity comes from the conditioning).
pub fn channel_axial_mhsa<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    num_heads: usize,
    qk_norm_eps: Option<f64>,
    weights: &AttnWeights,
    cache: &mut PlanCache,
) -> Result<Var> {
    let shape = g.value(x).shape().to_vec();
    if shape.len() != 4 {
        return Err(TensorError::InvalidArg {
            op: "channel_axial_mhsa",
            msg: format!(
                "expected SC grid [c, ty, tx, d], got shape {shape:?} (MC grids have no channel axis)"
            ),
        });
    }
    let (c, ty, tx, d) = (shape[0], shape[1], shape[2], shape[3]);
    let sites = ty * tx;
    if d % num_heads != 0 {
        return Err(TensorError::InvalidArg {
            op: "channel_axial_mhsa",
            msg: format!("width {d} not divisible by {num_heads} heads"),
        });
    }
    let hd = d / num_heads;
    let flat = g.reshape(x, vec![c * sites, d])?;
    let mut qkv = g.matmul(flat, weights.qkv_w)?;
    if let Some(b) = weights.qkv_b {
        qkv = g.add_vec(qkv, b)?;
    }
    let q_plan = axial_split_plan(cache, c, sites, num_heads, hd, 0)?;
    let k_plan = axial_split_plan(cache, c, sites, num_heads, hd, 1)?;
    let v_plan = axial_split_plan(cache, c, sites, num_heads, hd, 2)?;
    let mut q = g.gather(qkv, q_plan)?;
    let mut k = g.gather(qkv, k_plan)?;
    let v = g.gather(qkv, v_plan)?;
    if let Some(eps) = qk_norm_eps {
        if let (Some(gq), Some(gk)) = (weights.gamma_q, weights.gamma_k) {
            q = g.rmsnorm(q, gq, eps)?;
            k = g.rmsnorm(k, gk, eps)?;
        }
    }
    let ctx = attention_core(g, q, k, v, None, cache)?;
    let merge = axial_merge_plan(cache, c, sites, num_heads, hd)?;
    let merged = g.gather(ctx, merge)?;
    let mut out = g.matmul(merged, weights.proj_w)?;
    if let Some(b) = weights.proj_b {
        out = g.add_vec(out, b)?;
    }
    g.reshape(out, vec![c, ty, tx, d])
}

#[cfg(test)]
mod tests {
    use super::super::{oracle, WindowLayout, MASK_NEG};
    use super::*;
    use crate::tensor::{gradcheck, Tensor};

    struct Setup {
        d: usize,
        heads: usize,
        qkv_w: Vec<f64>,
        qkv_b: Vec<f64>,
        proj_w: Vec<f64>,
        proj_b: Vec<f64>,
        gamma_q: Vec<f64>,
        gamma_k: Vec<f64>,
        w1: Vec<f64>,
        b1: Vec<f64>,
        w2: Vec<f64>,
        b2: Vec<f64>,
    }

    fn setup(d: usize, heads: usize, hidden: usize, seed: u64) -> Setup {
        let mut rng = gradcheck::rng(seed);
        let mut v = |n: usize| -> Vec<f64> {
            gradcheck::random_vec(&mut rng, n)
                .into_iter()
                .map(|x| x * 0.5)
                .collect()
        };
        Setup {
            d,
            heads,
            qkv_w: v(d * 3 * d),
            qkv_b: v(3 * d),
            proj_w: v(d * d),
            proj_b: v(d),
            gamma_q: (0..d / heads).map(|i| 1.0 + 0.1 * i as f64).collect(),
            gamma_k: (0..d / heads).map(|i| 1.0 - 0.05 * i as f64).collect(),
            w1: v(2 * hidden),
            b1: v(hidden),
            w2: v(hidden * heads),
            b2: v(heads),
        }
    }

    fn bind<'g>(
        g: &mut Graph<f64>,
        s: &Setup,
    ) -> (AttnWeights, BiasNet) {
        let t = |shape: Vec<usize>, data: &[f64]| Tensor::new(shape, data.to_vec()).unwrap();
        let weights = AttnWeights {
            qkv_w: g.constant(t(vec![s.d, 3 * s.d], &s.qkv_w)).unwrap(),
            qkv_b: Some(g.constant(t(vec![3 * s.d], &s.qkv_b)).unwrap()),
            proj_w: g.constant(t(vec![s.d, s.d], &s.proj_w)).unwrap(),
            proj_b: Some(g.constant(t(vec![s.d], &s.proj_b)).unwrap()),
            gamma_q: Some(g.constant(t(vec![s.d / s.heads], &s.gamma_q)).unwrap()),
            gamma_k: Some(g.constant(t(vec![s.d / s.heads], &s.gamma_k)).unwrap()),
        };
        let hidden = s.b1.len();
        let bias = BiasNet {
            w1: g.constant(t(vec![2, hidden], &s.w1)).unwrap(),
            b1: g.constant(t(vec![hidden], &s.b1)).unwrap(),
            w2: g.constant(t(vec![hidden, s.heads], &s.w2)).unwrap(),
            b2: g.constant(t(vec![s.heads], &s.b2)).unwrap(),
        };
        (weights, bias)
    }

    fn run_windowed(
        s: &Setup,
        x: &[f64],
        ty: usize,
        tx: usize,
        window: usize,
        shift: usize,
        periodic: (bool, bool),
    ) -> Vec<f64> {
        let mut g = Graph::<f64>::new();
        let (weights, bias) = bind(&mut g, s);
        let xv = g
            .constant(Tensor::new(vec![ty, tx, s.d], x.to_vec()).unwrap())
            .unwrap();
        let cfg = WindowConfig {
            window,
            shift,
            num_heads: s.heads,
            periodic,
            qk_norm_eps: Some(1e-6),
        };
        let mut cache = PlanCache::new();
        let out = windowed_mhsa(&mut g, xv, &cfg, &weights, Some(&bias), &mut cache).unwrap();
        g.value(out).data().to_vec()
    }

    fn run_dense_equiv(
        s: &Setup,
        x: &[f64],
        ty: usize,
        tx: usize,
        window: usize,
        shift: usize,
        periodic: (bool, bool),
    ) -> Vec<f64> {
        let layout = WindowLayout::new(ty, tx, window, shift);
        let additive = oracle::windowed_as_dense_additive(
            &layout, periodic, s.heads, &s.w1, &s.b1, &s.w2, &s.b2,
        );
        let (out, _) = oracle::dense_mhsa(&oracle::DenseInputs {
            x,
            n: ty * tx,
            d: s.d,
            heads: s.heads,
            qkv_w: &s.qkv_w,
            qkv_b: Some(&s.qkv_b),
            proj_w: &s.proj_w,
            proj_b: Some(&s.proj_b),
            gamma_q: Some(&s.gamma_q),
            gamma_k: Some(&s.gamma_k),
            qk_eps: 1e-6,
            additive: Some(&additive),
        });
        out
    }

    #[test]
    fn windowed_matches_dense_oracle_all_shift_periodicity_combos() {
        let s = setup(8, 2, 16, 1);
        let mut rng = gradcheck::rng(42);
        let (ty, tx, w) = (8usize, 8usize, 4usize);
        let x = gradcheck::random_vec(&mut rng, ty * tx * s.d);
        for shift in [0, w / 2] {
            for periodic in [(true, true), (false, false), (true, false), (false, true)] {
                let ours = run_windowed(&s, &x, ty, tx, w, shift, periodic);
                let dense = run_dense_equiv(&s, &x, ty, tx, w, shift, periodic);
                let max_err = ours
                    .iter()
                    .zip(&dense)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0f64, f64::max);
                assert!(
                    max_err < 1e-5,
                    "shift={shift} periodic={periodic:?}: max abs err {max_err}"
                );
            }
        }
    }

    #[test]
    fn single_window_equals_unmasked_dense_attention() {
        let s = setup(8, 2, 16, 2);
        let mut rng = gradcheck::rng(3);
        let (ty, tx, w) = (4usize, 4usize, 4usize);
        let x = gradcheck::random_vec(&mut rng, ty * tx * s.d);
        let ours = run_windowed(&s, &x, ty, tx, w, 0, (true, true));
        // oracle: one window covering the grid, bias from intra-window coords
        let dense = run_dense_equiv(&s, &x, ty, tx, w, 0, (true, true));
        for (a, b) in ours.iter().zip(&dense) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn uniform_logits_average_each_window() {
        // Q=K=0 (uniform attention), V = identity, proj = identity, no bias:
        // every token becomes its window's mean
        let d = 4usize;
        let (ty, tx, w) = (4usize, 4usize, 2usize);
        let mut qkv_w = vec![0.0; d * 3 * d];
        for i in 0..d {
            qkv_w[i * 3 * d + 2 * d + i] = 1.0; // V block = I
        }
        let mut proj_w = vec![0.0; d * d];
        for i in 0..d {
            proj_w[i * d + i] = 1.0;
        }
        let mut rng = gradcheck::rng(5);
        let x = gradcheck::random_vec(&mut rng, ty * tx * d);

        let mut g = Graph::<f64>::new();
        let weights = AttnWeights {
            qkv_w: g
                .constant(Tensor::new(vec![d, 3 * d], qkv_w).unwrap())
                .unwrap(),
            qkv_b: None,
            proj_w: g
                .constant(Tensor::new(vec![d, d], proj_w).unwrap())
                .unwrap(),
            proj_b: None,
            gamma_q: None,
            gamma_k: None,
        };
        let xv = g
            .constant(Tensor::new(vec![ty, tx, d], x.clone()).unwrap())
            .unwrap();
        let cfg = WindowConfig {
            window: w,
            shift: 0,
            num_heads: 2,
            periodic: (true, true),
            qk_norm_eps: None,
        };
        let mut cache = PlanCache::new();
        let out = windowed_mhsa(&mut g, xv, &cfg, &weights, None, &mut cache).unwrap();
        let out = g.value(out).data();
        let layout = WindowLayout::new(ty, tx, w, 0);
        for win in 0..layout.nw {
            let members: Vec<(usize, usize)> = (0..layout.n)
                .filter_map(|s| layout.slot_coord(win * layout.n + s))
                .collect();
            let mut mean = vec![0.0; d];
            for &(y, xx) in &members {
                for e in 0..d {
                    mean[e] += x[(y * tx + xx) * d + e] / members.len() as f64;
                }
            }
            for &(y, xx) in &members {
                for e in 0..d {
                    assert!((out[(y * tx + xx) * d + e] - mean[e]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn constant_input_stays_constant_even_with_padding() {
        // attention rows are convex combinations of unmasked (real) tokens
        let s = setup(8, 2, 8, 7);
        let (ty, tx, w) = (2usize, 2usize, 4usize); // padded window path
        let x = vec![0.37; ty * tx * s.d];
        let out = run_windowed(&s, &x, ty, tx, w, 2, (true, true));
        let expect = run_windowed(&s, &x[..s.d].repeat(1), 1, 1, 1, 0, (true, true));
        // every site sees the same constant context, so all outputs match the
        // single-token result
        for site in 0..ty * tx {
            for e in 0..s.d {
                assert!(
                    (out[site * s.d + e] - expect[e]).abs() < 1e-9,
                    "site {site}"
                );
            }
        }
    }

    #[test]
    fn roll_by_window_commutes_with_block() {
        let s = setup(8, 2, 16, 9);
        let mut rng = gradcheck::rng(11);
        let (ty, tx, w) = (8usize, 8usize, 4usize);
        let x = gradcheck::random_vec(&mut rng, ty * tx * s.d);
        let roll = |f: &[f64], sy: usize, sx: usize| -> Vec<f64> {
            let mut out = vec![0.0; f.len()];
            for y in 0..ty {
                for xx in 0..tx {
                    for e in 0..s.d {
                        out[(((y + sy) % ty) * tx + (xx + sx) % tx) * s.d + e] =
                            f[(y * tx + xx) * s.d + e];
                    }
                }
            }
            out
        };
        for shift in [0, w / 2] {
            let base = run_windowed(&s, &x, ty, tx, w, shift, (true, true));
            let rolled_in = run_windowed(&s, &roll(&x, w, w), ty, tx, w, shift, (true, true));
            let rolled_base = roll(&base, w, w);
            for (a, b) in rolled_base.iter().zip(&rolled_in) {
                assert!((a - b).abs() < 1e-10, "shift {shift}");
            }
        }
    }

    #[test]
    fn qk_norm_bounds_logits() {
        let s = setup(8, 2, 16, 13);
        let mut rng = gradcheck::rng(17);
        // adversarially scaled input
        let x: Vec<f64> = gradcheck::random_vec(&mut rng, 16 * s.d)
            .into_iter()
            .map(|v| v * 1e4)
            .collect();
        let (_, max_logit) = oracle::dense_mhsa(&oracle::DenseInputs {
            x: &x,
            n: 16,
            d: s.d,
            heads: s.heads,
            qkv_w: &s.qkv_w,
            qkv_b: Some(&s.qkv_b),
            proj_w: &s.proj_w,
            proj_b: Some(&s.proj_b),
            gamma_q: Some(&s.gamma_q),
            gamma_k: Some(&s.gamma_k),
            qk_eps: 1e-6,
            additive: None,
        });
        let hd = (s.d / s.heads) as f64;
        let gq = s.gamma_q.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        let gk = s.gamma_k.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        let bound = hd.sqrt() * gq * gk;
        assert!(
            max_logit <= bound + 1e-9,
            "max logit {max_logit} exceeds bound {bound}"
        );
    }

    #[test]
    fn axial_matches_dense_per_site_and_handles_single_channel() {
        let s = setup(8, 2, 8, 21);
        let (c, ty, tx) = (3usize, 2usize, 2usize);
        let mut rng = gradcheck::rng(23);
        let x = gradcheck::random_vec(&mut rng, c * ty * tx * s.d);

        let mut g = Graph::<f64>::new();
        let (weights, _) = bind(&mut g, &s);
        let xv = g
            .constant(Tensor::new(vec![c, ty, tx, s.d], x.clone()).unwrap())
            .unwrap();
        let mut cache = PlanCache::new();
        let out = channel_axial_mhsa(&mut g, xv, s.heads, Some(1e-6), &weights, &mut cache)
            .unwrap();
        let out = g.value(out).data();

        for site in 0..ty * tx {
            // gather the c channel tokens at this site
            let xs: Vec<f64> = (0..c)
                .flat_map(|ci| {
                    x[(ci * ty * tx + site) * s.d..(ci * ty * tx + site + 1) * s.d].to_vec()
                })
                .collect();
            let (dense, _) = oracle::dense_mhsa(&oracle::DenseInputs {
                x: &xs,
                n: c,
                d: s.d,
                heads: s.heads,
                qkv_w: &s.qkv_w,
                qkv_b: Some(&s.qkv_b),
                proj_w: &s.proj_w,
                proj_b: Some(&s.proj_b),
                gamma_q: Some(&s.gamma_q),
                gamma_k: Some(&s.gamma_k),
                qk_eps: 1e-6,
                additive: None,
            });
            for ci in 0..c {
                for e in 0..s.d {
                    let a = out[(ci * ty * tx + site) * s.d + e];
                    let b = dense[ci * s.d + e];
                    assert!((a - b).abs() < 1e-6, "site {site} channel {ci}");
                }
            }
        }
    }

    #[test]
    fn axial_permutation_equivariance() {
        let s = setup(8, 2, 8, 31);
        let (c, ty, tx) = (3usize, 2usize, 2usize);
        let mut rng = gradcheck::rng(37);
        let x = gradcheck::random_vec(&mut rng, c * ty * tx * s.d);
        let perm = [2usize, 0, 1];
        let plane = ty * tx * s.d;
        let mut xp = vec![0.0; x.len()];
        for (to, &from) in perm.iter().enumerate() {
            xp[to * plane..(to + 1) * plane].copy_from_slice(&x[from * plane..(from + 1) * plane]);
        }
        let run = |data: &[f64]| -> Vec<f64> {
            let mut g = Graph::<f64>::new();
            let (weights, _) = bind(&mut g, &s);
            let xv = g
                .constant(Tensor::new(vec![c, ty, tx, s.d], data.to_vec()).unwrap())
                .unwrap();
            let mut cache = PlanCache::new();
            let out =
                channel_axial_mhsa(&mut g, xv, s.heads, Some(1e-6), &weights, &mut cache).unwrap();
            g.value(out).data().to_vec()
        };
        let base = run(&x);
        let permuted = run(&xp);
        for (to, &from) in perm.iter().enumerate() {
            for e in 0..plane {
                assert!((permuted[to * plane + e] - base[from * plane + e]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn axial_rejects_mc_grids() {
        let s = setup(8, 2, 8, 41);
        let mut g = Graph::<f64>::new();
        let (weights, _) = bind(&mut g, &s);
        let xv = g.constant(Tensor::zeros(vec![4, 4, s.d])).unwrap();
        let mut cache = PlanCache::new();
        assert!(channel_axial_mhsa(&mut g, xv, s.heads, None, &weights, &mut cache).is_err());
    }

    #[test]
    fn attention_gradients_match_finite_differences() {
        let d = 6usize;
        let heads = 2usize;
        let (ty, tx, w) = (4usize, 4usize, 2usize);
        let mut rng = gradcheck::rng(51);
        let x0 = gradcheck::random_vec(&mut rng, ty * tx * d);
        let qkv0 = gradcheck::random_vec(&mut rng, d * 3 * d);
        let probe = gradcheck::random_vec(&mut rng, ty * tx * d);

        let eval = |x: &[f64], qkv: &[f64]| -> (f64, Vec<f64>, Vec<f64>) {
            let mut g = Graph::<f64>::new();
            let xv = g
                .leaf(Tensor::new(vec![ty, tx, d], x.to_vec()).unwrap(), true)
                .unwrap();
            let qkv_w = g
                .leaf(Tensor::new(vec![d, 3 * d], qkv.to_vec()).unwrap(), true)
                .unwrap();
            let mut proj = vec![0.0; d * d];
            for i in 0..d {
                proj[i * d + i] = 1.0;
            }
            let weights = AttnWeights {
                qkv_w,
                qkv_b: None,
                proj_w: g.constant(Tensor::new(vec![d, d], proj).unwrap()).unwrap(),
                proj_b: None,
                gamma_q: None,
                gamma_k: None,
            };
            let cfg = WindowConfig {
                window: w,
                shift: 1,
                num_heads: heads,
                periodic: (true, false),
                qk_norm_eps: None,
            };
            let mut cache = PlanCache::new();
            let out = windowed_mhsa(&mut g, xv, &cfg, &weights, None, &mut cache).unwrap();
            let pv = g
                .constant(Tensor::new(vec![ty, tx, d], probe.clone()).unwrap())
                .unwrap();
            let prod = g.mul(out, pv).unwrap();
            let loss = g.sum(prod).unwrap();
            g.backward(loss).unwrap();
            (
                g.value(loss).item(),
                g.grad(xv).unwrap().data().to_vec(),
                g.grad(qkv_w).unwrap().data().to_vec(),
            )
        };
        let (_, dx, dqkv) = eval(&x0, &qkv0);
        let mut rng2 = gradcheck::rng(52);
        let px = gradcheck::probe_indices(&mut rng2, x0.len(), 10);
        gradcheck::check_against(|x| eval(x, &qkv0).0, &x0, &dx, &px, 1e-6, 1e-4).unwrap();
        let pw = gradcheck::probe_indices(&mut rng2, qkv0.len(), 10);
        gradcheck::check_against(|q| eval(&x0, q).0, &qkv0, &dqkv, &pw, 1e-6, 1e-4).unwrap();
    }

    #[test]
    fn mask_constant_is_finite() {
        assert!(MASK_NEG.is_finite());
    }
}
