//! Brute-force dense attention reference used by equivalence tests. This is
//! deliberately independent of the tape: plain f64 loops over explicit
//! matrices, recomputing everything from the raw weight slices.

use super::relbias::offset_index;
use super::WindowLayout;

pub struct DenseInputs<'a> {
    /// `[n, d]` token rows.
    pub x: &'a [f64],
    pub n: usize,
    pub d: usize,
    pub heads: usize,
    /// `[d, 3d]`; q/k/v blocks along columns.
    pub qkv_w: &'a [f64],
    pub qkv_b: Option<&'a [f64]>,
    /// `[d, d]`.
    pub proj_w: &'a [f64],
    pub proj_b: Option<&'a [f64]>,
    /// RMSNorm gains over head_dim; None disables QK-norm.
    pub gamma_q: Option<&'a [f64]>,
    pub gamma_k: Option<&'a [f64]>,
    pub qk_eps: f64,
    /// `[heads, n, n]` additive logits (bias and/or mask), or None.
    pub additive: Option<&'a [f64]>,
}

fn rmsnorm_row(row: &mut [f64], gamma: &[f64], eps: f64) {
    let ms = row.iter().map(|v| v * v).sum::<f64>() / row.len() as f64;
    let inv = 1.0 / (ms + eps).sqrt();
    for (v, g) in row.iter_mut().zip(gamma) {
        *v *= inv * g;
    }
}

/// Dense multi-head attention; returns `[n, d]` and the maximum absolute
/// scaled logit before the additive term (for bound checks).
pub fn dense_mhsa(inp: &DenseInputs) -> (Vec<f64>, f64) {
    let (n, d, heads) = (inp.n, inp.d, inp.heads);
    let hd = d / heads;
    // qkv projection
    let mut qkv = vec![0.0; n * 3 * d];
    for i in 0..n {
        for o in 0..3 * d {
            let mut s = inp.qkv_b.map_or(0.0, |b| b[o]);
            for k in 0..d {
                s += inp.x[i * d + k] * inp.qkv_w[k * 3 * d + o];
            }
            qkv[i * 3 * d + o] = s;
        }
    }
    let mut ctx = vec![0.0; n * d];
    let mut max_logit = 0.0f64;
    for h in 0..heads {
        // per-head q, k with optional rmsnorm
        let mut q = vec![0.0; n * hd];
        let mut k = vec![0.0; n * hd];
        let mut v = vec![0.0; n * hd];
        for i in 0..n {
            for e in 0..hd {
                q[i * hd + e] = qkv[i * 3 * d + h * hd + e];
                k[i * hd + e] = qkv[i * 3 * d + d + h * hd + e];
                v[i * hd + e] = qkv[i * 3 * d + 2 * d + h * hd + e];
            }
            if let Some(g) = inp.gamma_q {
                rmsnorm_row(&mut q[i * hd..(i + 1) * hd], g, inp.qk_eps);
            }
            if let Some(g) = inp.gamma_k {
                rmsnorm_row(&mut k[i * hd..(i + 1) * hd], g, inp.qk_eps);
            }
        }
        let scale = 1.0 / (hd as f64).sqrt();
        for i in 0..n {
            let mut logits = vec![0.0; n];
            for j in 0..n {
                let mut s = 0.0;
                for e in 0..hd {
                    s += q[i * hd + e] * k[j * hd + e];
                }
                let scaled = s * scale;
                max_logit = max_logit.max(scaled.abs());
                logits[j] = scaled
                    + inp
                        .additive
                        .map_or(0.0, |a| a[(h * n + i) * n + j]);
            }
            let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut exps: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
            let sum: f64 = exps.iter().sum();
            for e in &mut exps {
                *e /= sum;
            }
            for j in 0..n {
                for e in 0..hd {
                    ctx[i * d + h * hd + e] += exps[j] * v[j * hd + e];
                }
            }
        }
    }
    // output projection
    let mut out = vec![0.0; n * d];
    for i in 0..n {
        for o in 0..d {
            let mut s = inp.proj_b.map_or(0.0, |b| b[o]);
            for k in 0..d {
                s += ctx[i * d + k] * inp.proj_w[k * d + o];
            }
            out[i * d + o] = s;
        }
    }
    (out, max_logit)
}

/// Evaluate the relative-bias MLP for one displacement; independent
/// reimplementation of the tape path (same tanh GELU).
pub fn bias_mlp(
    window: usize,
    dy: i64,
    dx: i64,
    heads: usize,
    w1: &[f64],
    b1: &[f64],
    w2: &[f64],
    b2: &[f64],
) -> Vec<f64> {
    let hidden = b1.len();
    let scale = 1.0 / 3.0;
    let feat = [
        (dy.signum() as f64) * (1.0 + dy.unsigned_abs() as f64).log2() * scale,
        (dx.signum() as f64) * (1.0 + dx.unsigned_abs() as f64).log2() * scale,
    ];
    let gelu = |x: f64| {
        let c = 0.7978845608028654;
        0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
    };
    let mut h = vec![0.0; hidden];
    for j in 0..hidden {
        h[j] = gelu(feat[0] * w1[j] + feat[1] * w1[hidden + j] + b1[j]);
    }
    let mut out = vec![0.0; heads];
    for o in 0..heads {
        let mut s = b2[o];
        for j in 0..hidden {
            s += h[j] * w2[j * heads + o];
        }
        out[o] = s;
    }
    let _ = (window, offset_index(window, dy, dx)); // displacement domain check
    out
}

/// Full-grid additive logits `[heads, N, N]` (original token order) that make
/// dense attention equal windowed attention: pairs outside a shared window
/// get [`super::MASK_NEG`]; pairs inside get the boundary mask plus the
/// relative bias evaluated at their intra-window displacement.
#[allow(clippy::too_many_arguments)]
pub fn windowed_as_dense_additive(
    layout: &WindowLayout,
    periodic: (bool, bool),
    heads: usize,
    w1: &[f64],
    b1: &[f64],
    w2: &[f64],
    b2: &[f64],
) -> Vec<f64> {
    let n_tokens = layout.ty * layout.tx;
    let mask = super::boundary_mask(layout, periodic);
    let n = layout.n;
    let w = layout.window;
    let mut additive = vec![super::MASK_NEG; heads * n_tokens * n_tokens];
    for win in 0..layout.nw {
        for qs in 0..n {
            let Some((qy, qx)) = layout.slot_coord(win * n + qs) else {
                continue;
            };
            let q_tok = qy * layout.tx + qx;
            for ks in 0..n {
                let Some((ky, kx)) = layout.slot_coord(win * n + ks) else {
                    continue;
                };
                let k_tok = ky * layout.tx + kx;
                let m = mask[(win * n + qs) * n + ks];
                let dy = (qs / w) as i64 - (ks / w) as i64;
                let dx = (qs % w) as i64 - (ks % w) as i64;
                let bias = bias_mlp(w, dy, dx, heads, w1, b1, w2, b2);
                for h in 0..heads {
                    additive[(h * n_tokens + q_tok) * n_tokens + k_tok] = m + bias[h];
                }
            }
        }
    }
    additive
}
