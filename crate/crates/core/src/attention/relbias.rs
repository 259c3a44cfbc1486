//! Continuous relative position bias: a two-layer feed-forward network maps
//! log-spaced (dy, dx) offsets to one bias per head. The bias depends only on
//! the relative offset, which keeps windowed attention translation-invariant.

use crate::tensor::{Graph, Result, Scalar, Tensor, Var};

/// Number of distinct in-window offsets: (2w-1)^2.
pub fn num_offsets(window: usize) -> usize {
    (2 * window - 1) * (2 * window - 1)
}

/// Offset-table index for a (query - key) displacement.
pub fn offset_index(window: usize, dy: i64, dx: i64) -> usize {
    let side = (2 * window - 1) as i64;
    let iy = dy + (window as i64 - 1);
    let ix = dx + (window as i64 - 1);
    (iy * side + ix) as usize
}

/// Log-spaced offset features, `sign(d) * log2(1 + |d|) / log2(8)`.
pub fn bias_feature_table<T: Scalar>(window: usize) -> Tensor<T> {
    let side = 2 * window as i64 - 1;
    let mut data = Vec::with_capacity((side * side * 2) as usize);
    let scale = 1.0 / 3.0; // 1 / log2(8)
    for dy in -(window as i64 - 1)..=(window as i64 - 1) {
        for dx in -(window as i64 - 1)..=(window as i64 - 1) {
            for d in [dy, dx] {
                let v = (d.signum() as f64) * (1.0 + d.unsigned_abs() as f64).log2() * scale;
                data.push(T::from_f64(v));
            }
        }
    }
    Tensor::new(vec![(side * side) as usize, 2], data).expect("table sized by construction")
}

/// Parameters of the bias network for one attention layer.
#[derive(Debug, Clone, Copy)]
pub struct BiasNet {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

impl BiasNet {
    /// Evaluate the network on the full offset table: `[(2w-1)^2, heads]`.
    pub fn table<T: Scalar>(&self, g: &mut Graph<T>, window: usize) -> Result<Var> {
        let feats = g.constant(bias_feature_table::<T>(window))?;
        let h = g.matmul(feats, self.w1)?;
        let h = g.add_vec(h, self.b1)?;
        let h = g.gelu(h)?;
        let out = g.matmul(h, self.w2)?;
        g.add_vec(out, self.b2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feature_table_is_sign_symmetric() {
        let t = bias_feature_table::<f64>(4);
        assert_eq!(t.shape(), &[49, 2]);
        let at = |dy: i64, dx: i64| {
            let i = offset_index(4, dy, dx);
            (t.data()[i * 2], t.data()[i * 2 + 1])
        };
        let (py, px) = at(3, 2);
        let (ny, nx) = at(-3, -2);
        assert_eq!(py, -ny);
        assert_eq!(px, -nx);
        assert_eq!(at(0, 0), (0.0, 0.0));
        // log2(1+7)/log2(8) = 1 at the maximal displacement of w=8 windows
        let t8 = bias_feature_table::<f64>(8);
        let i = offset_index(8, 7, 0);
        assert_eq!(t8.data()[i * 2], 1.0);
    }
}
