//! Central finite-difference utilities used as the independent oracle for
//! gradient tests. Nothing here touches the tape: callers supply a plain
//! forward function `&[f64] -> f64` which is re-evaluated at shifted inputs.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Central difference d f / d x[i] with step `h`.
pub fn central_diff(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut xp = x.to_vec();
    let mut xm = x.to_vec();
    xp[i] += h;
    xm[i] -= h;
    (f(&xp) - f(&xm)) / (2.0 * h)
}

/// Relative error with an absolute floor so near-zero gradients compare sanely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Compare analytic gradients against central differences at the given
/// entries. Returns a description of the first violation.
pub fn check_against(
    mut f: impl FnMut(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    entries: &[usize],
    h: f64,
    rtol: f64,
) -> Result<(), String> {
    for &i in entries {
        let numeric = central_diff(&mut f, x, i, h);
        let err = rel_err(analytic[i], numeric);
        if err > rtol {
            return Err(format!(
                "entry {i}: analytic {:.6e} vs numeric {:.6e} (rel err {:.3e} > {rtol:.1e})",
                analytic[i], numeric, err
            ));
        }
    }
    Ok(())
}

/// Pick `count` distinct probe indices in `[0, n)`.
pub fn probe_indices(rng: &mut ChaCha8Rng, n: usize, count: usize) -> Vec<usize> {
    if n <= count {
        return (0..n).collect();
    }
    let mut picked = std::collections::BTreeSet::new();
    while picked.len() < count {
        picked.insert(rng.gen_range(0..n));
    }
    picked.into_iter().collect()
}
