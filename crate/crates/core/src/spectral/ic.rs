//! Initial condition generators. The three spectral initializers filter white
//! Gaussian noise in Fourier space (flat up to a cutoff, power-law decay, or
//! Gaussian decay), then rescale the field to a maximum absolute value of one.
//! Gray-Scott runs start from Gaussian blobs instead.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::fft::{signed_index, Rfft2, C64};
use super::SolverError;

fn white_noise(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    use rand_distr::StandardNormal;
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Filter white noise with a radially symmetric spectral gain, then normalize
/// so max|u| == 1.
fn filtered_noise(
    fft: &mut Rfft2,
    rng: &mut ChaCha8Rng,
    gain: impl Fn(f64) -> f64,
) -> Vec<f64> {
    let (nx, ny, nyh) = (fft.nx, fft.ny, fft.nyh);
    let noise = white_noise(rng, nx * ny);
    let mut spec = vec![C64::new(0.0, 0.0); fft.spec_len()];
    fft.forward(&noise, &mut spec);
    for i in 0..nx {
        let sx = signed_index(i, nx) as f64;
        for j in 0..nyh {
            let n_radial = (sx * sx + (j * j) as f64).sqrt();
            spec[i * nyh + j] *= gain(n_radial);
        }
    }
    let mut field = vec![0.0; nx * ny];
    fft.inverse(&mut spec, &mut field);
    normalize_max_abs(&mut field);
    field
}

pub fn normalize_max_abs(field: &mut [f64]) {
    let max = field.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    if max > 0.0 {
        for v in field.iter_mut() {
            *v /= max;
        }
    }
}

fn range_err(op: &'static str, name: &str, value: f64, range: &str) -> SolverError {
    SolverError::ParamOutOfRange {
        op,
        name: name.to_string(),
        value,
        range: range.to_string(),
    }
}

/// Superposition of random Fourier modes up to integer wavenumber `cutoff`;
/// spectral energy above the cutoff is exactly zero.
pub fn ic_truncated_fourier(
    fft: &mut Rfft2,
    cutoff: u32,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>, SolverError> {
    if !(2..11).contains(&cutoff) {
        return Err(range_err(
            "ic_truncated_fourier",
            "cutoff",
            cutoff as f64,
            "[2, 11)",
        ));
    }
    let c = cutoff as f64;
    Ok(filtered_noise(fft, rng, |n| {
        if n >= 1.0 && n <= c {
            1.0
        } else {
            0.0
        }
    }))
}

/// Gaussian random field with a power-law radial energy spectrum
/// `E(n) ~ n^-exponent` (per-mode amplitude `n^-(exponent+1)/2` in 2-D).
pub fn ic_grf(
    fft: &mut Rfft2,
    exponent: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>, SolverError> {
    if !(2.3..3.6).contains(&exponent) {
        return Err(range_err("ic_grf", "exponent", exponent, "[2.3, 3.6)"));
    }
    let p = (exponent + 1.0) / 2.0;
    Ok(filtered_noise(fft, rng, |n| {
        if n >= 1.0 {
            n.powf(-p)
        } else {
            0.0
        }
    }))
}

/// White noise diffused in place: the spectrum decays as
/// `exp(-intensity * (2 pi n)^2)`.
pub fn ic_diffused_noise(
    fft: &mut Rfft2,
    intensity: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>, SolverError> {
    if !(0.00005..0.01).contains(&intensity) {
        return Err(range_err(
            "ic_diffused_noise",
            "intensity",
            intensity,
            "[0.00005, 0.01)",
        ));
    }
    let tau = std::f64::consts::TAU;
    Ok(filtered_noise(fft, rng, |n| {
        let k = tau * n;
        if n >= 1.0 {
            (-intensity * k * k).exp()
        } else {
            0.0
        }
    }))
}

/// One of the three spectral initializers, chosen uniformly with its
/// parameter drawn from the documented range. Used per field component.
pub fn ic_random_spectral(fft: &mut Rfft2, rng: &mut ChaCha8Rng) -> Vec<f64> {
    match rng.gen_range(0..3u32) {
        0 => {
            let cutoff = rng.gen_range(2..11u32);
            ic_truncated_fourier(fft, cutoff, rng).expect("cutoff in range")
        }
        1 => {
            let exponent = rng.gen_range(2.3..3.6);
            ic_grf(fft, exponent, rng).expect("exponent in range")
        }
        _ => {
            let intensity = rng.gen_range(0.00005..0.01);
            ic_diffused_noise(fft, intensity, rng).expect("intensity in range")
        }
    }
}

/// Gray-Scott initializer: `n_blobs` Gaussian bumps of random position and
/// variance inside the central `region_fraction` of the domain. Returns
/// `(c_a, c_b)` with `c_a = 1 - c_b` exactly and `c_b` clamped to [0, 1].
pub fn ic_gaussian_blobs(
    nx: usize,
    ny: usize,
    extent: (f64, f64),
    n_blobs: usize,
    region_fraction: f64,
    rng: &mut ChaCha8Rng,
) -> (Vec<f64>, Vec<f64>) {
    let (lx, ly) = extent;
    let blobs: Vec<(f64, f64, f64)> = (0..n_blobs)
        .map(|_| {
            let cx = lx * (0.5 + region_fraction * (rng.gen_range(0.0..1.0) - 0.5));
            let cy = ly * (0.5 + region_fraction * (rng.gen_range(0.0..1.0) - 0.5));
            let sigma = rng.gen_range(0.02..0.06) * lx.min(ly);
            (cx, cy, sigma)
        })
        .collect();
    let mut c_b = vec![0.0f64; nx * ny];
    for x in 0..nx {
        let px = (x as f64 + 0.5) * lx / nx as f64;
        for y in 0..ny {
            let py = (y as f64 + 0.5) * ly / ny as f64;
            let mut acc = 0.0;
            for &(cx, cy, sigma) in &blobs {
                let d2 = (px - cx).powi(2) + (py - cy).powi(2);
                acc += (-d2 / (2.0 * sigma * sigma)).exp();
            }
            c_b[x * ny + y] = acc.min(1.0);
        }
    }
    let c_a: Vec<f64> = c_b.iter().map(|&b| 1.0 - b).collect();
    (c_a, c_b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn radial_energy(fft: &mut Rfft2, field: &[f64]) -> Vec<f64> {
        let (nx, nyh) = (fft.nx, fft.nyh);
        let mut spec = vec![C64::new(0.0, 0.0); fft.spec_len()];
        fft.forward(field, &mut spec);
        let n_bins = nx / 2 + 1;
        let mut energy = vec![0.0; n_bins];
        for i in 0..nx {
            let sx = signed_index(i, nx) as f64;
            for j in 0..nyh {
                let n = (sx * sx + (j * j) as f64).sqrt().round() as usize;
                if n < n_bins {
                    // count conjugate pair weight for interior ky
                    let w = if j == 0 || j == nyh - 1 { 1.0 } else { 2.0 };
                    energy[n] += w * spec[i * nyh + j].norm_sqr();
                }
            }
        }
        energy
    }

    #[test]
    fn all_generators_normalize_to_unit_max() {
        let mut fft = Rfft2::new(32, 32);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let f = ic_random_spectral(&mut fft, &mut rng);
            let max = f.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
            assert!((max - 1.0).abs() < 1e-6, "max {max}");
        }
    }

    #[test]
    fn truncated_fourier_has_no_energy_above_cutoff() {
        let mut fft = Rfft2::new(64, 64);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cutoff = 6;
        let f = ic_truncated_fourier(&mut fft, cutoff, &mut rng).unwrap();
        let energy = radial_energy(&mut fft, &f);
        let total: f64 = energy.iter().sum();
        for (n, &e) in energy.iter().enumerate() {
            if n as f64 > cutoff as f64 + 0.5 {
                assert!(e / total < 1e-24, "energy {e} at radial bin {n}");
            }
        }
    }

    #[test]
    fn grf_radial_spectrum_slope_near_exponent() {
        let mut fft = Rfft2::new(256, 256);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = ic_grf(&mut fft, 3.0, &mut rng).unwrap();
        let energy = radial_energy(&mut fft, &f);
        // least-squares slope of log E(n) vs log n over the resolved band
        let pts: Vec<(f64, f64)> = (2..=(256 / 3))
            .filter(|&n| energy[n] > 0.0)
            .map(|n| ((n as f64).ln(), energy[n].ln()))
            .collect();
        let n = pts.len() as f64;
        let sx: f64 = pts.iter().map(|p| p.0).sum();
        let sy: f64 = pts.iter().map(|p| p.1).sum();
        let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        assert!(
            (slope + 3.0).abs() < 0.3,
            "radial spectrum slope {slope}, expected -3.0 +- 0.3"
        );
    }

    #[test]
    fn out_of_range_parameters_rejected() {
        let mut fft = Rfft2::new(16, 16);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(ic_truncated_fourier(&mut fft, 1, &mut rng).is_err());
        assert!(ic_truncated_fourier(&mut fft, 11, &mut rng).is_err());
        assert!(ic_grf(&mut fft, 4.0, &mut rng).is_err());
        assert!(ic_diffused_noise(&mut fft, 0.5, &mut rng).is_err());
    }

    #[test]
    fn generators_are_deterministic_per_seed() {
        let mut fft = Rfft2::new(32, 32);
        let a = ic_grf(&mut fft, 3.1, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = ic_grf(&mut fft, 3.1, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn blobs_sum_to_one_and_stay_central() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (c_a, c_b) = ic_gaussian_blobs(64, 64, (2.5, 2.5), 4, 0.6, &mut rng);
        for (a, b) in c_a.iter().zip(&c_b) {
            assert_eq!(a + b, 1.0);
            assert!((0.0..=1.0).contains(b));
        }
        // zero blobs: c_b = 0, c_a = 1
        let (c_a0, c_b0) = ic_gaussian_blobs(16, 16, (2.5, 2.5), 0, 0.6, &mut rng);
        assert!(c_b0.iter().all(|&v| v == 0.0));
        assert!(c_a0.iter().all(|&v| v == 1.0));
        // significant concentration only in the central region
        let (_, c_b) = ic_gaussian_blobs(64, 64, (2.5, 2.5), 4, 0.2, &mut rng);
        for x in 0..64usize {
            for y in 0..64usize {
                let px = (x as f64 + 0.5) / 64.0;
                let py = (y as f64 + 0.5) / 64.0;
                // outside a generous margin around the central 20%
                if (px - 0.5).abs() > 0.35 || (py - 0.5).abs() > 0.35 {
                    assert!(c_b[x * 64 + y] < 0.05, "mass far from center");
                }
            }
        }
    }
}
