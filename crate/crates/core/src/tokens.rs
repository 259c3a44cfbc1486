//! Token pipeline: patch embedding and unembedding, mixed-channel (MC) vs
//! separate-channel (SC) construction, and PixelShuffle/PixelUnshuffle token
//! resampling. All rearrangements are gather plans (pure permutations, plus
//! zero-fill for MC channel padding), so gradients flow through every stage.

use std::sync::Arc;

use crate::tensor::{GatherPlan, Graph, Result, Scalar, TensorError, Var};

/// Token lattice flowing through the transformer stages. The channel axis is
/// present only in SC mode; the tensor behind `var` has shape
/// `[ty, tx, dim]` (MC) or `[channels, ty, tx, dim]` (SC).
#[derive(Debug, Clone, Copy)]
pub struct TokenGrid {
    pub var: Var,
    /// SC channel-axis size; `None` in MC mode.
    pub channels: Option<usize>,
    pub ty: usize,
    pub tx: usize,
    pub dim: usize,
}

impl TokenGrid {
    pub fn num_sites(&self) -> usize {
        self.ty * self.tx
    }

    /// Total token count (x channels in SC mode).
    pub fn num_tokens(&self) -> usize {
        self.num_sites() * self.channels.unwrap_or(1)
    }

    pub fn shape(&self) -> Vec<usize> {
        match self.channels {
            Some(c) => vec![c, self.ty, self.tx, self.dim],
            None => vec![self.ty, self.tx, self.dim],
        }
    }
}

/// Rate at which embedding inflates raw data per token: `d / (p^2 T)`.
pub fn expansion_rate(dim: usize, patch: usize, temporal: usize) -> f64 {
    dim as f64 / (patch * patch * temporal) as f64
}

fn check_divisible(h: usize, w: usize, p: usize) -> Result<()> {
    if p == 0 || h % p != 0 || w % p != 0 {
        return Err(TensorError::InvalidArg {
            op: "patchify",
            msg: format!("resolution {h}x{w} not divisible by patch size {p}"),
        });
    }
    Ok(())
}

/// Plan building the MC patch matrix `[ty*tx, t*c_pad*p*p]` from an input
/// `[t, c, h, w]`, zero-padding channels `c..c_pad`.
fn mc_patch_plan(
    t: usize,
    c: usize,
    c_pad: usize,
    h: usize,
    w: usize,
    p: usize,
) -> Result<Arc<GatherPlan>> {
    let (ty, tx) = (h / p, w / p);
    let feat = t * c_pad * p * p;
    let mut idx = Vec::with_capacity(ty * tx * feat);
    for ty_i in 0..ty {
        for tx_i in 0..tx {
            for tt in 0..t {
                for cc in 0..c_pad {
                    for py in 0..p {
                        for px in 0..p {
                            if cc < c {
                                let y = ty_i * p + py;
                                let x = tx_i * p + px;
                                idx.push(((tt * c + cc) * h + y) * w + x);
                            } else {
                                idx.push(GatherPlan::PAD);
                            }
                        }
                    }
                }
            }
        }
    }
    GatherPlan::new(vec![ty * tx, feat], t * c * h * w, idx)
}

/// Mixed-channel patch embedding: every physical channel shares one token.
/// `input` is `[t, c, h, w]` with `c <= c_pad`; weights are
/// `[t*c_pad*p*p, d]`.
pub fn patchify_mc<T: Scalar>(
    g: &mut Graph<T>,
    input: Var,
    c_pad: usize,
    p: usize,
    weight: Var,
    bias: Option<Var>,
) -> Result<TokenGrid> {
    let shape = g.value(input).shape().to_vec();
    if shape.len() != 4 {
        return Err(TensorError::Rank {
            op: "patchify_mc",
            expected: 4,
            shape,
        });
    }
    let (t, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    if c > c_pad {
        return Err(TensorError::InvalidArg {
            op: "patchify_mc",
            msg: format!("{c} channels exceed the padded channel count {c_pad}"),
        });
    }
    check_divisible(h, w, p)?;
    let plan = mc_patch_plan(t, c, c_pad, h, w, p)?;
    let patches = g.gather(input, plan)?;
    let mut tokens = g.matmul(patches, weight)?;
    if let Some(b) = bias {
        tokens = g.add_vec(tokens, b)?;
    }
    let dim = g.value(weight).shape()[1];
    let (ty, tx) = (h / p, w / p);
    let tokens = g.reshape(tokens, vec![ty, tx, dim])?;
    Ok(TokenGrid {
        var: tokens,
        channels: None,
        ty,
        tx,
        dim,
    })
}

/// Separate-channel patch embedding: each channel is embedded independently
/// with shared weights `[t*p*p, d]`; the token count scales linearly with
/// the channel count.
pub fn patchify_sc<T: Scalar>(
    g: &mut Graph<T>,
    input: Var,
    p: usize,
    weight: Var,
    bias: Option<Var>,
) -> Result<TokenGrid> {
    let shape = g.value(input).shape().to_vec();
    if shape.len() != 4 {
        return Err(TensorError::Rank {
            op: "patchify_sc",
            expected: 4,
            shape,
        });
    }
    let (t, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    check_divisible(h, w, p)?;
    let (ty, tx) = (h / p, w / p);
    let feat = t * p * p;
    let mut idx = Vec::with_capacity(c * ty * tx * feat);
    for cc in 0..c {
        for ty_i in 0..ty {
            for tx_i in 0..tx {
                for tt in 0..t {
                    for py in 0..p {
                        for px in 0..p {
                            let y = ty_i * p + py;
                            let x = tx_i * p + px;
                            idx.push(((tt * c + cc) * h + y) * w + x);
                        }
                    }
                }
            }
        }
    }
    let plan = GatherPlan::new(vec![c * ty * tx, feat], t * c * h * w, idx)?;
    let patches = g.gather(input, plan)?;
    let mut tokens = g.matmul(patches, weight)?;
    if let Some(b) = bias {
        tokens = g.add_vec(tokens, b)?;
    }
    let dim = g.value(weight).shape()[1];
    let tokens = g.reshape(tokens, vec![c, ty, tx, dim])?;
    Ok(TokenGrid {
        var: tokens,
        channels: Some(c),
        ty,
        tx,
        dim,
    })
}

/// Project tokens back to pixel space: `[1, c_out, ty*p, tx*p]`.
/// MC: weights `[d, c_out*p*p]`. SC: weights `[d, p*p]`, one output channel
/// per token channel.
pub fn unpatchify<T: Scalar>(
    g: &mut Graph<T>,
    grid: &TokenGrid,
    p: usize,
    weight: Var,
    bias: Option<Var>,
) -> Result<Var> {
    let (ty, tx) = (grid.ty, grid.tx);
    let (h, w) = (ty * p, tx * p);
    let rows = grid.num_tokens();
    let flat = g.reshape(grid.var, vec![rows, grid.dim])?;
    let mut pix = g.matmul(flat, weight)?;
    if let Some(b) = bias {
        pix = g.add_vec(pix, b)?;
    }
    let out_feat = g.value(weight).shape()[1];
    match grid.channels {
        None => {
            let c_out = out_feat / (p * p);
            if c_out * p * p != out_feat {
                return Err(TensorError::InvalidArg {
                    op: "unpatchify",
                    msg: format!("output features {out_feat} not divisible by p^2"),
                });
            }
            // [ty*tx, c*p*p] -> [1, c, h, w]
            let mut idx = Vec::with_capacity(c_out * h * w);
            for cc in 0..c_out {
                for y in 0..h {
                    for x in 0..w {
                        let row = (y / p) * tx + x / p;
                        let feat = (cc * p + y % p) * p + x % p;
                        idx.push(row * out_feat + feat);
                    }
                }
            }
            let plan = GatherPlan::new(vec![1, c_out, h, w], rows * out_feat, idx)?;
            g.gather(pix, plan)
        }
        Some(c) => {
            if out_feat != p * p {
                return Err(TensorError::InvalidArg {
                    op: "unpatchify",
                    msg: format!("SC unembed expects p^2 = {} features, got {out_feat}", p * p),
                });
            }
            // [c*ty*tx, p*p] -> [1, c, h, w]
            let mut idx = Vec::with_capacity(c * h * w);
            for cc in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        let row = (cc * ty + y / p) * tx + x / p;
                        let feat = (y % p) * p + x % p;
                        idx.push(row * out_feat + feat);
                    }
                }
            }
            let plan = GatherPlan::new(vec![1, c, h, w], rows * out_feat, idx)?;
            g.gather(pix, plan)
        }
    }
}

/// Space-to-depth rearrangement plan: `[ty, tx, d] -> [ty/2, tx/2, 4d]`
/// (per channel in SC mode), neighborhood order (dy, dx).
fn unshuffle_plan(channels: usize, ty: usize, tx: usize, d: usize, factor: usize) -> Arc<GatherPlan> {
    let (oy, ox) = (ty / factor, tx / factor);
    let od = d * factor * factor;
    let mut idx = Vec::with_capacity(channels * ty * tx * d);
    for c in 0..channels {
        for y in 0..oy {
            for x in 0..ox {
                for dy in 0..factor {
                    for dx in 0..factor {
                        let sy = y * factor + dy;
                        let sx = x * factor + dx;
                        let base = ((c * ty + sy) * tx + sx) * d;
                        idx.extend(base..base + d);
                    }
                }
            }
        }
    }
    let shape = if channels == 1 {
        vec![oy, ox, od]
    } else {
        vec![channels, oy, ox, od]
    };
    GatherPlan::new(shape, channels * ty * tx * d, idx).expect("plan is a permutation")
}

/// Depth-to-space plan: `[ty, tx, d] -> [2ty, 2tx, d/4]`.
fn shuffle_plan(channels: usize, ty: usize, tx: usize, d: usize, factor: usize) -> Arc<GatherPlan> {
    let od = d / (factor * factor);
    let (oy, ox) = (ty * factor, tx * factor);
    let mut idx = Vec::with_capacity(channels * oy * ox * od);
    for c in 0..channels {
        for y in 0..oy {
            for x in 0..ox {
                let sy = y / factor;
                let sx = x / factor;
                let block = (y % factor) * factor + x % factor;
                let base = ((c * ty + sy) * tx + sx) * d + block * od;
                idx.extend(base..base + od);
            }
        }
    }
    let shape = if channels == 1 {
        vec![oy, ox, od]
    } else {
        vec![channels, oy, ox, od]
    };
    GatherPlan::new(shape, channels * ty * tx * d, idx).expect("plan is a permutation")
}

/// Downsample tokens: space-to-depth then linear projection
/// `[4d -> d_next]`.
pub fn pixel_unshuffle_down<T: Scalar>(
    g: &mut Graph<T>,
    grid: &TokenGrid,
    factor: usize,
    proj_w: Var,
    proj_b: Option<Var>,
) -> Result<TokenGrid> {
    if grid.ty % factor != 0 || grid.tx % factor != 0 {
        return Err(TensorError::InvalidArg {
            op: "pixel_unshuffle_down",
            msg: format!(
                "token grid {}x{} not divisible by factor {factor}",
                grid.ty, grid.tx
            ),
        });
    }
    let c = grid.channels.unwrap_or(1);
    let plan = unshuffle_plan(c, grid.ty, grid.tx, grid.dim, factor);
    let gathered = g.gather(grid.var, plan)?;
    let rows = c * (grid.ty / factor) * (grid.tx / factor);
    let flat = g.reshape(gathered, vec![rows, grid.dim * factor * factor])?;
    let mut out = g.matmul(flat, proj_w)?;
    if let Some(b) = proj_b {
        out = g.add_vec(out, b)?;
    }
    let d_next = g.value(proj_w).shape()[1];
    let (ty, tx) = (grid.ty / factor, grid.tx / factor);
    let shape = match grid.channels {
        Some(c) => vec![c, ty, tx, d_next],
        None => vec![ty, tx, d_next],
    };
    let out = g.reshape(out, shape)?;
    Ok(TokenGrid {
        var: out,
        channels: grid.channels,
        ty,
        tx,
        dim: d_next,
    })
}

/// Upsample tokens: depth-to-space then linear projection
/// `[d/4 -> d_next]`.
pub fn pixel_shuffle_up<T: Scalar>(
    g: &mut Graph<T>,
    grid: &TokenGrid,
    factor: usize,
    proj_w: Var,
    proj_b: Option<Var>,
) -> Result<TokenGrid> {
    if grid.dim % (factor * factor) != 0 {
        return Err(TensorError::InvalidArg {
            op: "pixel_shuffle_up",
            msg: format!(
                "token dim {} not divisible by factor^2 = {}",
                grid.dim,
                factor * factor
            ),
        });
    }
    let c = grid.channels.unwrap_or(1);
    let plan = shuffle_plan(c, grid.ty, grid.tx, grid.dim, factor);
    let gathered = g.gather(grid.var, plan)?;
    let (ty, tx) = (grid.ty * factor, grid.tx * factor);
    let rows = c * ty * tx;
    let flat = g.reshape(gathered, vec![rows, grid.dim / (factor * factor)])?;
    let mut out = g.matmul(flat, proj_w)?;
    if let Some(b) = proj_b {
        out = g.add_vec(out, b)?;
    }
    let d_next = g.value(proj_w).shape()[1];
    let shape = match grid.channels {
        Some(c) => vec![c, ty, tx, d_next],
        None => vec![ty, tx, d_next],
    };
    let out = g.reshape(out, shape)?;
    Ok(TokenGrid {
        var: out,
        channels: grid.channels,
        ty,
        tx,
        dim: d_next,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{gradcheck, Tensor};

    fn eye(n: usize) -> Tensor<f64> {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Tensor::new(vec![n, n], data).unwrap()
    }

    #[test]
    fn token_counts_follow_resolution_over_patch() {
        let mut g = Graph::<f64>::new();
        let input = g.constant(Tensor::zeros(vec![1, 1, 256, 256])).unwrap();
        let w = g.constant(Tensor::zeros(vec![16, 8])).unwrap();
        let grid = patchify_mc(&mut g, input, 1, 4, w, None).unwrap();
        assert_eq!((grid.ty, grid.tx), (64, 64));
        assert_eq!(grid.num_tokens(), 64 * 64);
    }

    #[test]
    fn expansion_rate_arithmetic() {
        assert_eq!(expansion_rate(96, 4, 1), 6.0);
    }

    #[test]
    fn sc_doubles_token_count_per_extra_channel() {
        let mut g = Graph::<f64>::new();
        let one = g.constant(Tensor::zeros(vec![1, 1, 16, 16])).unwrap();
        let two = g.constant(Tensor::zeros(vec![1, 2, 16, 16])).unwrap();
        let w = g.constant(Tensor::zeros(vec![16, 8])).unwrap();
        let g1 = patchify_sc(&mut g, one, 4, w, None).unwrap();
        let g2 = patchify_sc(&mut g, two, 4, w, None).unwrap();
        assert_eq!(g2.num_tokens(), 2 * g1.num_tokens());
        assert_eq!(g2.shape(), vec![2, 4, 4, 8]);
    }

    #[test]
    fn mc_zero_padding_contributes_nothing() {
        let mut rng = gradcheck::rng(2);
        let data = gradcheck::random_vec(&mut rng, 8 * 8);
        let wdata = gradcheck::random_vec(&mut rng, 2 * 4 * 12);

        let mut g = Graph::<f64>::new();
        // one real channel, padded to c_max = 2
        let input1 = g
            .constant(Tensor::new(vec![1, 1, 8, 8], data.clone()).unwrap())
            .unwrap();
        let w = g
            .constant(Tensor::new(vec![2 * 4, 12], wdata.clone()).unwrap())
            .unwrap();
        let grid1 = patchify_mc(&mut g, input1, 2, 2, w, None).unwrap();

        // explicit zero second channel
        let mut data2 = data.clone();
        data2.extend(std::iter::repeat(0.0).take(64));
        let input2 = g
            .constant(Tensor::new(vec![1, 2, 8, 8], data2).unwrap())
            .unwrap();
        let grid2 = patchify_mc(&mut g, input2, 2, 2, w, None).unwrap();

        assert_eq!(g.value(grid1.var).data(), g.value(grid2.var).data());
    }

    #[test]
    fn mc_rejects_too_many_channels() {
        let mut g = Graph::<f64>::new();
        let input = g.constant(Tensor::zeros(vec![1, 3, 8, 8])).unwrap();
        let w = g.constant(Tensor::zeros(vec![8, 4])).unwrap();
        assert!(patchify_mc(&mut g, input, 2, 2, w, None).is_err());
        let odd = g.constant(Tensor::zeros(vec![1, 1, 9, 9])).unwrap();
        assert!(patchify_mc(&mut g, odd, 1, 2, w, None).is_err());
    }

    #[test]
    fn unpatchify_shape_contract_and_zero_tokens() {
        let mut g = Graph::<f64>::new();
        let input = g.constant(Tensor::zeros(vec![1, 1, 256, 256])).unwrap();
        let w_in = g.constant(Tensor::zeros(vec![16, 8])).unwrap();
        let grid = patchify_mc(&mut g, input, 1, 4, w_in, None).unwrap();
        let w_out = g.constant(Tensor::zeros(vec![8, 16])).unwrap();
        let out = unpatchify(&mut g, &grid, 4, w_out, None).unwrap();
        assert_eq!(g.value(out).shape(), &[1, 1, 256, 256]);
        assert!(g.value(out).data().iter().all(|&v| v == 0.0));
    }

    /// Least-squares right inverse of W `[n, d]` with d >= n: P = W^T (W W^T)^-1.
    fn right_inverse(w: &Tensor<f64>) -> Tensor<f64> {
        let (n, d) = (w.shape()[0], w.shape()[1]);
        // gram = W W^T, n x n
        let mut gram = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for k in 0..d {
                    s += w.data()[i * d + k] * w.data()[j * d + k];
                }
                gram[i * n + j] = s;
            }
        }
        // invert gram by Gauss-Jordan
        let mut aug = vec![0.0; n * 2 * n];
        for i in 0..n {
            for j in 0..n {
                aug[i * 2 * n + j] = gram[i * n + j];
            }
            aug[i * 2 * n + n + i] = 1.0;
        }
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&a, &b| {
                    aug[a * 2 * n + col]
                        .abs()
                        .partial_cmp(&aug[b * 2 * n + col].abs())
                        .unwrap()
                })
                .unwrap();
            if pivot != col {
                for j in 0..2 * n {
                    aug.swap(col * 2 * n + j, pivot * 2 * n + j);
                }
            }
            let p = aug[col * 2 * n + col];
            for j in 0..2 * n {
                aug[col * 2 * n + j] /= p;
            }
            for i in 0..n {
                if i != col {
                    let f = aug[i * 2 * n + col];
                    for j in 0..2 * n {
                        aug[i * 2 * n + j] -= f * aug[col * 2 * n + j];
                    }
                }
            }
        }
        // P = W^T inv(gram): [d, n]
        let mut p = vec![0.0; d * n];
        for r in 0..d {
            for c in 0..n {
                let mut s = 0.0;
                for k in 0..n {
                    s += w.data()[k * d + r] * aug[k * 2 * n + n + c];
                }
                p[r * n + c] = s;
            }
        }
        Tensor::new(vec![d, n], p).unwrap()
    }

    #[test]
    fn patchify_unpatchify_roundtrip_with_pseudo_inverse() {
        // over-parameterized regime: d = 24 >= p^2 T C = 16
        let mut rng = gradcheck::rng(6);
        let w_embed = Tensor::new(vec![16, 24], gradcheck::random_vec(&mut rng, 16 * 24)).unwrap();
        let w_out = right_inverse(&w_embed);
        let field = gradcheck::random_vec(&mut rng, 8 * 8);

        let mut g = Graph::<f64>::new();
        let input = g
            .constant(Tensor::new(vec![1, 1, 8, 8], field.clone()).unwrap())
            .unwrap();
        let vw = g.constant(w_embed).unwrap();
        let grid = patchify_mc(&mut g, input, 1, 4, vw, None).unwrap();
        let vp = g.constant(w_out).unwrap();
        let out = unpatchify(&mut g, &grid, 4, vp, None).unwrap();
        for (a, b) in g.value(out).data().iter().zip(&field) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn unshuffle_shape_and_shuffle_roundtrip() {
        let mut rng = gradcheck::rng(8);
        let data = gradcheck::random_vec(&mut rng, 8 * 8 * 4);
        let mut g = Graph::<f64>::new();
        let tokens = g
            .constant(Tensor::new(vec![8, 8, 4], data.clone()).unwrap())
            .unwrap();
        let grid = TokenGrid {
            var: tokens,
            channels: None,
            ty: 8,
            tx: 8,
            dim: 4,
        };
        let id16 = g.constant(eye(16)).unwrap();
        let down = pixel_unshuffle_down(&mut g, &grid, 2, id16, None).unwrap();
        assert_eq!(g.value(down.var).shape(), &[4, 4, 16]);

        // rearrangement is a permutation: multiset of values preserved
        let mut a = data.clone();
        let mut b = g.value(down.var).data().to_vec();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        assert_eq!(a, b);

        let id4 = g.constant(eye(4)).unwrap();
        let up = pixel_shuffle_up(&mut g, &down, 2, id4, None).unwrap();
        assert_eq!(g.value(up.var).shape(), &[8, 8, 4]);
        assert_eq!(g.value(up.var).data(), &data[..]);
    }

    #[test]
    fn indivisible_grid_rejected() {
        let mut g = Graph::<f64>::new();
        let tokens = g.constant(Tensor::zeros(vec![3, 3, 4])).unwrap();
        let grid = TokenGrid {
            var: tokens,
            channels: None,
            ty: 3,
            tx: 3,
            dim: 4,
        };
        let id = g.constant(eye(16)).unwrap();
        assert!(pixel_unshuffle_down(&mut g, &grid, 2, id, None).is_err());
    }

    #[test]
    fn sc_unshuffle_keeps_channel_axis() {
        let mut g = Graph::<f64>::new();
        let tokens = g.constant(Tensor::zeros(vec![2, 4, 4, 4])).unwrap();
        let grid = TokenGrid {
            var: tokens,
            channels: Some(2),
            ty: 4,
            tx: 4,
            dim: 4,
        };
        let id = g.constant(eye(16)).unwrap();
        let down = pixel_unshuffle_down(&mut g, &grid, 2, id, None).unwrap();
        assert_eq!(g.value(down.var).shape(), &[2, 2, 2, 16]);
        assert_eq!(down.channels, Some(2));
    }
}
