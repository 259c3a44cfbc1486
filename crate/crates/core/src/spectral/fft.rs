//! Real 2-D FFT built on rustfft: forward keeps the half spectrum
//! `[nx, ny/2 + 1]` (Hermitian redundancy dropped along y), inverse
//! reconstructs the mirrored coefficients and returns the real field.
//! Forward is unnormalized; inverse divides by `nx * ny`.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

pub type C64 = Complex<f64>;

pub struct Rfft2 {
    pub nx: usize,
    pub ny: usize,
    /// ny / 2 + 1
    pub nyh: usize,
    fft_y: Arc<dyn Fft<f64>>,
    ifft_y: Arc<dyn Fft<f64>>,
    fft_x: Arc<dyn Fft<f64>>,
    ifft_x: Arc<dyn Fft<f64>>,
    row: Vec<C64>,
    col: Vec<C64>,
}

impl Rfft2 {
    pub fn new(nx: usize, ny: usize) -> Self {
        let mut planner = FftPlanner::new();
        Rfft2 {
            nx,
            ny,
            nyh: ny / 2 + 1,
            fft_y: planner.plan_fft_forward(ny),
            ifft_y: planner.plan_fft_inverse(ny),
            fft_x: planner.plan_fft_forward(nx),
            ifft_x: planner.plan_fft_inverse(nx),
            row: vec![C64::default(); ny],
            col: vec![C64::default(); nx],
        }
    }

    pub fn spec_len(&self) -> usize {
        self.nx * self.nyh
    }

    /// `real` is `[nx, ny]` row-major, `out` is `[nx, nyh]`.
    pub fn forward(&mut self, real: &[f64], out: &mut [C64]) {
        debug_assert_eq!(real.len(), self.nx * self.ny);
        debug_assert_eq!(out.len(), self.spec_len());
        for x in 0..self.nx {
            for y in 0..self.ny {
                self.row[y] = C64::new(real[x * self.ny + y], 0.0);
            }
            self.fft_y.process(&mut self.row);
            out[x * self.nyh..(x + 1) * self.nyh].copy_from_slice(&self.row[..self.nyh]);
        }
        for j in 0..self.nyh {
            for x in 0..self.nx {
                self.col[x] = out[x * self.nyh + j];
            }
            self.fft_x.process(&mut self.col);
            for x in 0..self.nx {
                out[x * self.nyh + j] = self.col[x];
            }
        }
    }

    /// Inverse of [`Rfft2::forward`]; `spec` is consumed as scratch.
    pub fn inverse(&mut self, spec: &mut [C64], real: &mut [f64]) {
        debug_assert_eq!(spec.len(), self.spec_len());
        debug_assert_eq!(real.len(), self.nx * self.ny);
        for j in 0..self.nyh {
            for x in 0..self.nx {
                self.col[x] = spec[x * self.nyh + j];
            }
            self.ifft_x.process(&mut self.col);
            for x in 0..self.nx {
                spec[x * self.nyh + j] = self.col[x];
            }
        }
        let norm = 1.0 / (self.nx as f64 * self.ny as f64);
        for x in 0..self.nx {
            let half = &spec[x * self.nyh..(x + 1) * self.nyh];
            self.row[..self.nyh].copy_from_slice(half);
            for y in self.nyh..self.ny {
                self.row[y] = half[self.ny - y].conj();
            }
            self.ifft_y.process(&mut self.row);
            for y in 0..self.ny {
                real[x * self.ny + y] = self.row[y].re * norm;
            }
        }
    }
}

/// Signed integer wavenumber index along a full axis of length `n`:
/// `0, 1, ..., n/2, -(n/2 - 1), ..., -1`.
pub fn signed_index(i: usize, n: usize) -> i64 {
    if i <= n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

/// Wavenumber grids in radians per length unit, `k = 2*pi*n / L`.
///
/// `kx_odd`/`ky_odd` zero the self-paired Nyquist entries so that odd-order
/// derivative multipliers keep the spectrum of a real field Hermitian.
pub struct WaveNumbers {
    pub nx: usize,
    pub ny: usize,
    pub nyh: usize,
    pub kx: Vec<f64>,
    pub ky: Vec<f64>,
    pub kx_odd: Vec<f64>,
    pub ky_odd: Vec<f64>,
}

impl WaveNumbers {
    pub fn new(nx: usize, ny: usize, lx: f64, ly: f64) -> Self {
        let tau = std::f64::consts::TAU;
        let kx: Vec<f64> = (0..nx).map(|i| tau * signed_index(i, nx) as f64 / lx).collect();
        let nyh = ny / 2 + 1;
        let ky: Vec<f64> = (0..nyh).map(|j| tau * j as f64 / ly).collect();
        let mut kx_odd = kx.clone();
        if nx % 2 == 0 {
            kx_odd[nx / 2] = 0.0;
        }
        let mut ky_odd = ky.clone();
        if ny % 2 == 0 {
            ky_odd[nyh - 1] = 0.0;
        }
        WaveNumbers {
            nx,
            ny,
            nyh,
            kx,
            ky,
            kx_odd,
            ky_odd,
        }
    }

    pub fn k_squared(&self, i: usize, j: usize) -> f64 {
        self.kx[i] * self.kx[i] + self.ky[j] * self.ky[j]
    }

    /// 2/3-rule dealiasing mask over the half spectrum.
    pub fn dealias_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.nx * self.nyh];
        for i in 0..self.nx {
            let sx = signed_index(i, self.nx).unsigned_abs() as usize;
            for j in 0..self.nyh {
                mask[i * self.nyh + j] = sx <= self.nx / 3 && j <= self.ny / 3;
            }
        }
        mask
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn roundtrip_random_field() {
        let (nx, ny) = (16, 8);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let field: Vec<f64> = (0..nx * ny).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut fft = Rfft2::new(nx, ny);
        let mut spec = vec![C64::default(); fft.spec_len()];
        fft.forward(&field, &mut spec);
        let mut back = vec![0.0; nx * ny];
        fft.inverse(&mut spec, &mut back);
        for (a, b) in field.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn forward_of_cosine_hits_single_mode() {
        let (nx, ny) = (8, 8);
        let mut field = vec![0.0; nx * ny];
        for x in 0..nx {
            for y in 0..ny {
                field[x * ny + y] = (std::f64::consts::TAU * 2.0 * y as f64 / ny as f64).cos();
            }
        }
        let mut fft = Rfft2::new(nx, ny);
        let mut spec = vec![C64::default(); fft.spec_len()];
        fft.forward(&field, &mut spec);
        // cos(2*2pi*y/N) -> coefficient N^2/2 at (kx=0, ky=2)
        let expect = (nx * ny) as f64 / 2.0;
        for i in 0..nx {
            for j in 0..fft.nyh {
                let v = spec[i * fft.nyh + j];
                if i == 0 && j == 2 {
                    assert!((v.re - expect).abs() < 1e-9 && v.im.abs() < 1e-9);
                } else {
                    assert!(v.norm() < 1e-9, "unexpected energy at ({i},{j})");
                }
            }
        }
    }

    #[test]
    fn signed_indices() {
        assert_eq!(signed_index(0, 8), 0);
        assert_eq!(signed_index(4, 8), 4);
        assert_eq!(signed_index(5, 8), -3);
        assert_eq!(signed_index(7, 8), -1);
    }
}
