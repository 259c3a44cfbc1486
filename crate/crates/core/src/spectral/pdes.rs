//! Linear operators and dealiased nonlinear terms for every supported PDE.
//! All PDEs are evolved on periodic domains in the half-spectrum
//! representation; quadratic and cubic products are formed in real space and
//! truncated with the 2/3 rule when transformed back.


use super::etdrk::{Nonlinear, SpecFields};
use super::fft::{Rfft2, WaveNumbers, C64};

/// Shared FFT plans, wavenumber grids, the dealiasing mask, and scratch
/// buffers for nonlinear evaluations.
pub struct SpectralOps {
    pub fft: Rfft2,
    pub wn: WaveNumbers,
    dealias: Vec<bool>,
    real: Vec<Vec<f64>>,
    spec: Vec<C64>,
}

impl SpectralOps {
    pub fn new(nx: usize, ny: usize, lx: f64, ly: f64, real_buffers: usize) -> Self {
        let fft = Rfft2::new(nx, ny);
        let wn = WaveNumbers::new(nx, ny, lx, ly);
        let dealias = wn.dealias_mask();
        let spec_len = fft.spec_len();
        SpectralOps {
            fft,
            wn,
            dealias,
            real: vec![vec![0.0; nx * ny]; real_buffers],
            spec: vec![C64::new(0.0, 0.0); spec_len],
        }
    }

    /// Inverse transform without consuming the caller's spectrum.
    pub fn to_real(&mut self, spec: &[C64], out_idx: usize) {
        self.spec.copy_from_slice(spec);
        let buf = &mut self.real[out_idx];
        self.fft.inverse(&mut self.spec, buf);
    }

    pub fn real_buf(&self, idx: usize) -> &[f64] {
        &self.real[idx]
    }

    pub fn real_buf_mut(&mut self, idx: usize) -> &mut [f64] {
        &mut self.real[idx]
    }

    /// Forward transform of a scratch real buffer, dealiased.
    pub fn to_spec_dealiased(&mut self, in_idx: usize, out: &mut [C64]) {
        let buf = &self.real[in_idx];
        self.fft.forward(buf, out);
        for (v, &keep) in out.iter_mut().zip(&self.dealias) {
            if !keep {
                *v = C64::new(0.0, 0.0);
            }
        }
    }

    pub fn apply_dealias(&self, spec: &mut [C64]) {
        for (v, &keep) in spec.iter_mut().zip(&self.dealias) {
            if !keep {
                *v = C64::new(0.0, 0.0);
            }
        }
    }
}

/// No reaction or advection: plain linear dynamics (diffusion).
pub struct ZeroNonlinear;

impl Nonlinear for ZeroNonlinear {
    fn eval(&mut self, _state: &SpecFields, out: &mut SpecFields) {
        for f in out {
            f.fill(C64::new(0.0, 0.0));
        }
    }
}

/// Fisher-KPP reaction: N(u) = -r u^2 (the +r u part lives in the linear
/// operator).
pub struct FisherNonlinear {
    pub reactivity: f64,
    pub ops: SpectralOps,
}

impl Nonlinear for FisherNonlinear {
    fn eval(&mut self, state: &SpecFields, out: &mut SpecFields) {
        self.ops.to_real(&state[0], 0);
        let buf = self.ops.real_buf_mut(0);
        for v in buf.iter_mut() {
            *v = *v * *v;
        }
        self.ops.to_spec_dealiased(0, &mut out[0]);
        let r = self.reactivity;
        for v in out[0].iter_mut() {
            *v *= -r;
        }
    }
}

/// Swift-Hohenberg quadratic-cubic reaction: N(u) = u^2 - u^3.
pub struct ShNonlinear {
    pub ops: SpectralOps,
}

impl Nonlinear for ShNonlinear {
    fn eval(&mut self, state: &SpecFields, out: &mut SpecFields) {
        self.ops.to_real(&state[0], 0);
        let buf = self.ops.real_buf_mut(0);
        for v in buf.iter_mut() {
            let u = *v;
            *v = u * u - u * u * u;
        }
        self.ops.to_spec_dealiased(0, &mut out[0]);
    }
}

/// Gray-Scott reaction for (c_a, c_b):
/// N_a = -a b^2 + f (1 - a),  N_b = a b^2 - (f + k) b.
pub struct GrayScottNonlinear {
    pub feed: f64,
    pub kill: f64,
    pub ops: SpectralOps,
}

impl Nonlinear for GrayScottNonlinear {
    fn eval(&mut self, state: &SpecFields, out: &mut SpecFields) {
        self.ops.to_real(&state[0], 0);
        self.ops.to_real(&state[1], 1);
        let (f, k) = (self.feed, self.kill);
        let n = self.ops.real_buf(0).len();
        for idx in 0..n {
            let a = self.ops.real[0][idx];
            let b = self.ops.real[1][idx];
            let abb = a * b * b;
            self.ops.real[2][idx] = -abb + f * (1.0 - a);
            self.ops.real[3][idx] = abb - (f + k) * b;
        }
        self.ops.to_spec_dealiased(2, &mut out[0]);
        self.ops.to_spec_dealiased(3, &mut out[1]);
    }
}

/// Burgers convection in conservative form:
/// N_i = -1/2 sum_j d/dx_j (u_i u_j); exactly preserves each spatial mean.
pub struct BurgersNonlinear {
    pub ops: SpectralOps,
}

impl Nonlinear for BurgersNonlinear {
    fn eval(&mut self, state: &SpecFields, out: &mut SpecFields) {
        let nyh = self.ops.wn.nyh;
        self.ops.to_real(&state[0], 0); // u
        self.ops.to_real(&state[1], 1); // v
        let n = self.ops.real[0].len();
        for idx in 0..n {
            let u = self.ops.real[0][idx];
            let v = self.ops.real[1][idx];
            self.ops.real[2][idx] = u * u;
            self.ops.real[3][idx] = u * v;
            self.ops.real[4][idx] = v * v;
        }
        let mut uu = vec![C64::new(0.0, 0.0); state[0].len()];
        let mut uv = vec![C64::new(0.0, 0.0); state[0].len()];
        let mut vv = vec![C64::new(0.0, 0.0); state[0].len()];
        self.ops.to_spec_dealiased(2, &mut uu);
        self.ops.to_spec_dealiased(3, &mut uv);
        self.ops.to_spec_dealiased(4, &mut vv);
        let i_unit = C64::new(0.0, 1.0);
        for i in 0..self.ops.wn.nx {
            let ikx = i_unit * self.ops.wn.kx_odd[i];
            for j in 0..nyh {
                let iky = i_unit * self.ops.wn.ky_odd[j];
                let m = i * nyh + j;
                out[0][m] = -0.5 * (ikx * uu[m] + iky * uv[m]);
                out[1][m] = -0.5 * (ikx * uv[m] + iky * vv[m]);
            }
        }
    }
}

/// Korteweg-de-Vries convection (dispersion is linear):
/// N_i = -(c/2) d/dx_i (u_i^2) with convection coefficient c.
pub struct KdvNonlinear {
    pub convection: f64,
    pub ops: SpectralOps,
}

impl Nonlinear for KdvNonlinear {
    fn eval(&mut self, state: &SpecFields, out: &mut SpecFields) {
        let nyh = self.ops.wn.nyh;
        for f in 0..2 {
            self.ops.to_real(&state[f], 0);
            let buf = self.ops.real_buf_mut(0);
            for v in buf.iter_mut() {
                *v = *v * *v;
            }
            let mut sq = vec![C64::new(0.0, 0.0); state[f].len()];
            self.ops.to_spec_dealiased(0, &mut sq);
            let i_unit = C64::new(0.0, 1.0);
            let half_c = 0.5 * self.convection;
            for i in 0..self.ops.wn.nx {
                for j in 0..nyh {
                    let m = i * nyh + j;
                    let k_i = if f == 0 {
                        self.ops.wn.kx_odd[i]
                    } else {
                        self.ops.wn.ky_odd[j]
                    };
                    out[f][m] = -half_c * i_unit * k_i * sq[m];
                }
            }
        }
    }
}

/// Kuramoto-Sivashinsky gradient-norm nonlinearity: N(u) = -1/2 |grad u|^2.
pub struct KsNonlinear {
    pub ops: SpectralOps,
}

impl Nonlinear for KsNonlinear {
    fn eval(&mut self, state: &SpecFields, out: &mut SpecFields) {
        let nyh = self.ops.wn.nyh;
        let i_unit = C64::new(0.0, 1.0);
        let mut dx = vec![C64::new(0.0, 0.0); state[0].len()];
        let mut dy = vec![C64::new(0.0, 0.0); state[0].len()];
        for i in 0..self.ops.wn.nx {
            for j in 0..nyh {
                let m = i * nyh + j;
                dx[m] = i_unit * self.ops.wn.kx_odd[i] * state[0][m];
                dy[m] = i_unit * self.ops.wn.ky_odd[j] * state[0][m];
            }
        }
        self.ops.to_real(&dx, 0);
        self.ops.to_real(&dy, 1);
        let n = self.ops.real[0].len();
        for idx in 0..n {
            let gx = self.ops.real[0][idx];
            let gy = self.ops.real[1][idx];
            self.ops.real[2][idx] = -0.5 * (gx * gx + gy * gy);
        }
        self.ops.to_spec_dealiased(2, &mut out[0]);
    }
}

/// Navier-Stokes in streamfunction-vorticity form:
/// solve lap(psi) = -omega, advect with u = (psi_y, -psi_x), optional
/// stationary forcing added in spectral space.
pub struct VorticityNonlinear {
    pub ops: SpectralOps,
    pub forcing: Option<Vec<C64>>,
}

impl VorticityNonlinear {
    /// Kolmogorov forcing `amplitude * sin(wavenumber * 2 pi y / L_y)` as a
    /// spectral field.
    pub fn kolmogorov_forcing(
        ops: &mut SpectralOps,
        wavenumber: f64,
        amplitude: f64,
    ) -> Vec<C64> {
        let (nx, ny) = (ops.wn.nx, ops.wn.ny);
        let buf = ops.real_buf_mut(0);
        for x in 0..nx {
            for y in 0..ny {
                let py = (y as f64 + 0.5) / ny as f64;
                buf[x * ny + y] = amplitude * (wavenumber * std::f64::consts::TAU * py).sin();
            }
        }
        let mut spec = vec![C64::new(0.0, 0.0); ops.fft.spec_len()];
        let buf = ops.real[0].clone();
        ops.fft.forward(&buf, &mut spec);
        spec
    }
}

impl Nonlinear for VorticityNonlinear {
    fn eval(&mut self, state: &SpecFields, out: &mut SpecFields) {
        let nyh = self.ops.wn.nyh;
        let nx = self.ops.wn.nx;
        let i_unit = C64::new(0.0, 1.0);
        let omega = &state[0];
        let mut u_spec = vec![C64::new(0.0, 0.0); omega.len()];
        let mut v_spec = vec![C64::new(0.0, 0.0); omega.len()];
        let mut wx_spec = vec![C64::new(0.0, 0.0); omega.len()];
        let mut wy_spec = vec![C64::new(0.0, 0.0); omega.len()];
        for i in 0..nx {
            for j in 0..nyh {
                let m = i * nyh + j;
                let k2 = self.ops.wn.k_squared(i, j);
                // psi = omega / k^2 (mean mode has no flow)
                let psi = if k2 > 0.0 { omega[m] / k2 } else { C64::new(0.0, 0.0) };
                u_spec[m] = i_unit * self.ops.wn.ky_odd[j] * psi;
                v_spec[m] = -i_unit * self.ops.wn.kx_odd[i] * psi;
                wx_spec[m] = i_unit * self.ops.wn.kx_odd[i] * omega[m];
                wy_spec[m] = i_unit * self.ops.wn.ky_odd[j] * omega[m];
            }
        }
        self.ops.to_real(&u_spec, 0);
        self.ops.to_real(&v_spec, 1);
        self.ops.to_real(&wx_spec, 2);
        self.ops.to_real(&wy_spec, 3);
        let n = self.ops.real[0].len();
        for idx in 0..n {
            self.ops.real[4][idx] = -(self.ops.real[0][idx] * self.ops.real[2][idx]
                + self.ops.real[1][idx] * self.ops.real[3][idx]);
        }
        self.ops.to_spec_dealiased(4, &mut out[0]);
        if let Some(forcing) = &self.forcing {
            for (o, f) in out[0].iter_mut().zip(forcing) {
                *o += f;
            }
        }
    }
}

/// Diagonal linear operators per field for each PDE kind, given the sampled
/// parameters. Conventions (k in rad/length):
/// * diff: `-(nu_x kx^2 + nu_y ky^2)`
/// * fisher: `-D k^2 + r`
/// * sh: `r - (1 - k^2/kappa^2)^2`
/// * gray-scott: `-d_a k^2`, `-d_b k^2`
/// * burgers: `-nu k^2`
/// * kdv: `i d k_i^3 - nu k^2` per component
/// * ks: `k^2 - k^4`
/// * vorticity: `-nu k^2`
pub mod linear {
    use super::*;

    pub fn diff(wn: &WaveNumbers, nu_x: f64, nu_y: f64) -> Vec<Vec<C64>> {
        vec![build(wn, |kx, ky| {
            C64::new(-(nu_x * kx * kx + nu_y * ky * ky), 0.0)
        })]
    }

    pub fn fisher(wn: &WaveNumbers, diffusivity: f64, reactivity: f64) -> Vec<Vec<C64>> {
        vec![build(wn, |kx, ky| {
            C64::new(-diffusivity * (kx * kx + ky * ky) + reactivity, 0.0)
        })]
    }

    pub fn swift_hohenberg(wn: &WaveNumbers, reactivity: f64, critical: f64) -> Vec<Vec<C64>> {
        vec![build(wn, |kx, ky| {
            let k2 = kx * kx + ky * ky;
            let q = 1.0 - k2 / (critical * critical);
            C64::new(reactivity - q * q, 0.0)
        })]
    }

    pub fn gray_scott(wn: &WaveNumbers, d_a: f64, d_b: f64) -> Vec<Vec<C64>> {
        vec![
            build(wn, |kx, ky| C64::new(-d_a * (kx * kx + ky * ky), 0.0)),
            build(wn, |kx, ky| C64::new(-d_b * (kx * kx + ky * ky), 0.0)),
        ]
    }

    pub fn burgers(wn: &WaveNumbers, nu: f64) -> Vec<Vec<C64>> {
        let l = build(wn, |kx, ky| C64::new(-nu * (kx * kx + ky * ky), 0.0));
        vec![l.clone(), l]
    }

    pub fn kdv(wn: &WaveNumbers, dispersivity: f64, nu: f64) -> Vec<Vec<C64>> {
        let lx = build_odd(wn, |kxo, _, kx, ky| {
            C64::new(-nu * (kx * kx + ky * ky), dispersivity * kxo * kxo * kxo)
        });
        let ly = build_odd(wn, |_, kyo, kx, ky| {
            C64::new(-nu * (kx * kx + ky * ky), dispersivity * kyo * kyo * kyo)
        });
        vec![lx, ly]
    }

    pub fn ks(wn: &WaveNumbers) -> Vec<Vec<C64>> {
        vec![build(wn, |kx, ky| {
            let k2 = kx * kx + ky * ky;
            C64::new(k2 - k2 * k2, 0.0)
        })]
    }

    pub fn vorticity(wn: &WaveNumbers, nu: f64) -> Vec<Vec<C64>> {
        vec![build(wn, |kx, ky| C64::new(-nu * (kx * kx + ky * ky), 0.0))]
    }

    fn build(wn: &WaveNumbers, f: impl Fn(f64, f64) -> C64) -> Vec<C64> {
        let mut out = Vec::with_capacity(wn.nx * wn.nyh);
        for i in 0..wn.nx {
            for j in 0..wn.nyh {
                out.push(f(wn.kx[i], wn.ky[j]));
            }
        }
        out
    }

    fn build_odd(wn: &WaveNumbers, f: impl Fn(f64, f64, f64, f64) -> C64) -> Vec<C64> {
        let mut out = Vec::with_capacity(wn.nx * wn.nyh);
        for i in 0..wn.nx {
            for j in 0..wn.nyh {
                out.push(f(wn.kx_odd[i], wn.ky_odd[j], wn.kx[i], wn.ky[j]));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::super::etdrk::{tables2, Stepper, StepScratch};
    use super::*;

    #[test]
    fn vorticity_shear_mode_decays_exactly() {
        // omega = cos(3 * 2 pi y / L): the induced velocity is a pure shear,
        // advection vanishes, and the mode decays as exp(-nu k^2 t).
        let (nx, ny, l) = (32usize, 32usize, 1.0f64);
        let nu = 0.01;
        let mode = 3.0;
        let mut ops = SpectralOps::new(nx, ny, l, l, 5);
        let mut field = vec![0.0f64; nx * ny];
        for x in 0..nx {
            for y in 0..ny {
                field[x * ny + y] =
                    (mode * std::f64::consts::TAU * (y as f64 + 0.5) / ny as f64).cos();
            }
        }
        let mut spec = vec![C64::new(0.0, 0.0); ops.fft.spec_len()];
        ops.fft.forward(&field, &mut spec);
        let linear = linear::vorticity(&ops.wn, nu);
        let dt = 0.05;
        let stepper = Stepper::Two(vec![tables2(&linear[0], dt)]);
        let mut nl = VorticityNonlinear {
            ops: SpectralOps::new(nx, ny, l, l, 5),
            forcing: None,
        };
        let mut state = vec![spec];
        let mut scratch = StepScratch::new(1, nx * (ny / 2 + 1));
        let steps = 20;
        for _ in 0..steps {
            stepper.step(&mut state, &mut nl, &mut scratch);
        }
        let mut out = vec![0.0f64; nx * ny];
        ops.to_real(&state[0], 0);
        out.copy_from_slice(ops.real_buf(0));
        let k = mode * std::f64::consts::TAU / l;
        let decay = (-nu * k * k * dt * steps as f64).exp();
        for x in 0..nx {
            for y in 0..ny {
                let expect = decay
                    * (mode * std::f64::consts::TAU * (y as f64 + 0.5) / ny as f64).cos();
                let rel = (out[x * ny + y] - expect).abs() / decay;
                assert!(rel < 1e-10, "rel err {rel}");
            }
        }
    }

    #[test]
    fn zero_vorticity_stays_zero() {
        let (nx, ny) = (16usize, 16usize);
        let linear = linear::vorticity(&WaveNumbers::new(nx, ny, 1.0, 1.0), 0.001);
        let stepper = Stepper::Two(vec![tables2(&linear[0], 0.1)]);
        let mut nl = VorticityNonlinear {
            ops: SpectralOps::new(nx, ny, 1.0, 1.0, 5),
            forcing: None,
        };
        let spec_len = nx * (ny / 2 + 1);
        let mut state = vec![vec![C64::new(0.0, 0.0); spec_len]];
        let mut scratch = StepScratch::new(1, spec_len);
        for _ in 0..5 {
            stepper.step(&mut state, &mut nl, &mut scratch);
        }
        assert!(state[0].iter().all(|c| c.norm() == 0.0));
    }
}
