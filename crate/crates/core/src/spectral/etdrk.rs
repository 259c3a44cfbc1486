//! Exponential time differencing Runge-Kutta steppers for PDEs whose linear
//! part is diagonal in Fourier space. The linear propagator is the exact
//! exponential; phi-function weights are evaluated as a mean over 16 points
//! on a unit circle around each `dt * L` value, which avoids the catastrophic
//! cancellation of the naive formulas near zero.

use super::fft::C64;

const CONTOUR_POINTS: usize = 16;

fn contour_mean(z: C64, f: impl Fn(C64) -> C64) -> C64 {
    let mut acc = C64::new(0.0, 0.0);
    for m in 0..CONTOUR_POINTS {
        let theta = std::f64::consts::TAU * (m as f64 + 0.5) / CONTOUR_POINTS as f64;
        acc += f(z + C64::from_polar(1.0, theta));
    }
    acc / CONTOUR_POINTS as f64
}

/// phi1(z) = (e^z - 1) / z
fn phi1(z: C64) -> C64 {
    contour_mean(z, |w| (w.exp() - 1.0) / w)
}

/// phi2(z) = (e^z - z - 1) / z^2
fn phi2(z: C64) -> C64 {
    contour_mean(z, |w| (w.exp() - w - 1.0) / (w * w))
}

/// Per-mode weights for one field, second order (Cox-Matthews ETD2RK).
pub struct Tables2 {
    pub e: Vec<C64>,
    /// dt * phi1(dt L)
    pub w1: Vec<C64>,
    /// dt * phi2(dt L)
    pub w2: Vec<C64>,
}

pub fn tables2(linear: &[C64], dt: f64) -> Tables2 {
    let mut e = Vec::with_capacity(linear.len());
    let mut w1 = Vec::with_capacity(linear.len());
    let mut w2 = Vec::with_capacity(linear.len());
    for &l in linear {
        let z = l * dt;
        e.push(z.exp());
        w1.push(phi1(z) * dt);
        w2.push(phi2(z) * dt);
    }
    Tables2 { e, w1, w2 }
}

/// Per-mode weights for one field, fourth order (Cox-Matthews ETDRK4 with
/// Kassam-Trefethen contour coefficients).
pub struct Tables4 {
    pub e: Vec<C64>,
    pub e2: Vec<C64>,
    pub q: Vec<C64>,
    pub f1: Vec<C64>,
    pub f2: Vec<C64>,
    pub f3: Vec<C64>,
}

pub fn tables4(linear: &[C64], dt: f64) -> Tables4 {
    let n = linear.len();
    let mut t = Tables4 {
        e: Vec::with_capacity(n),
        e2: Vec::with_capacity(n),
        q: Vec::with_capacity(n),
        f1: Vec::with_capacity(n),
        f2: Vec::with_capacity(n),
        f3: Vec::with_capacity(n),
    };
    for &l in linear {
        let z = l * dt;
        t.e.push(z.exp());
        t.e2.push((z / 2.0).exp());
        t.q.push(contour_mean(z, |w| ((w / 2.0).exp() - 1.0) / w) * dt);
        t.f1.push(contour_mean(z, |w| {
            (-4.0 - w + w.exp() * (4.0 - 3.0 * w + w * w)) / (w * w * w)
        }) * dt);
        t.f2.push(contour_mean(z, |w| {
            (2.0 + w + w.exp() * (w - 2.0)) / (w * w * w)
        }) * dt);
        t.f3.push(contour_mean(z, |w| {
            (-4.0 - 3.0 * w - w * w + w.exp() * (4.0 - w)) / (w * w * w)
        }) * dt);
    }
    t
}

pub type SpecFields = Vec<Vec<C64>>;

/// Evaluates the dealiased nonlinear term in spectral space:
/// `out[field] = N(state)[field]`.
pub trait Nonlinear {
    fn eval(&mut self, state: &SpecFields, out: &mut SpecFields);
}

/// No-op nonlinearity for purely linear PDEs.
pub struct NoNonlinear;

impl Nonlinear for NoNonlinear {
    fn eval(&mut self, _state: &SpecFields, out: &mut SpecFields) {
        for f in out {
            f.fill(C64::new(0.0, 0.0));
        }
    }
}

pub enum Stepper {
    Two(Vec<Tables2>),
    Four(Vec<Tables4>),
}

impl Stepper {
    pub fn order(&self) -> usize {
        match self {
            Stepper::Two(_) => 2,
            Stepper::Four(_) => 4,
        }
    }

    /// Advance `state` by one dt (the dt baked into the tables).
    pub fn step<N: Nonlinear>(&self, state: &mut SpecFields, nl: &mut N, scratch: &mut StepScratch) {
        match self {
            Stepper::Two(tables) => {
                nl.eval(state, &mut scratch.n0);
                // predictor: u1 = e*u + w1*N(u)
                for (f, t) in tables.iter().enumerate() {
                    for (m, v) in scratch.s1[f].iter_mut().enumerate() {
                        *v = t.e[m] * state[f][m] + t.w1[m] * scratch.n0[f][m];
                    }
                }
                nl.eval(&scratch.s1, &mut scratch.n1);
                // corrector: u <- u1 + w2*(N(u1) - N(u))
                for (f, t) in tables.iter().enumerate() {
                    for m in 0..t.e.len() {
                        state[f][m] =
                            scratch.s1[f][m] + t.w2[m] * (scratch.n1[f][m] - scratch.n0[f][m]);
                    }
                }
            }
            Stepper::Four(tables) => {
                nl.eval(state, &mut scratch.n0);
                for (f, t) in tables.iter().enumerate() {
                    for (m, v) in scratch.s1[f].iter_mut().enumerate() {
                        *v = t.e2[m] * state[f][m] + t.q[m] * scratch.n0[f][m];
                    }
                }
                nl.eval(&scratch.s1, &mut scratch.n1); // Na
                for (f, t) in tables.iter().enumerate() {
                    for (m, v) in scratch.s2[f].iter_mut().enumerate() {
                        *v = t.e2[m] * state[f][m] + t.q[m] * scratch.n1[f][m];
                    }
                }
                nl.eval(&scratch.s2, &mut scratch.n2); // Nb
                for (f, t) in tables.iter().enumerate() {
                    for (m, v) in scratch.s3[f].iter_mut().enumerate() {
                        *v = t.e2[m] * scratch.s1[f][m]
                            + t.q[m] * (2.0 * scratch.n2[f][m] - scratch.n0[f][m]);
                    }
                }
                nl.eval(&scratch.s3, &mut scratch.n3); // Nc
                for (f, t) in tables.iter().enumerate() {
                    for m in 0..t.e.len() {
                        state[f][m] = t.e[m] * state[f][m]
                            + t.f1[m] * scratch.n0[f][m]
                            + t.f2[m] * 2.0 * (scratch.n1[f][m] + scratch.n2[f][m])
                            + t.f3[m] * scratch.n3[f][m];
                    }
                }
            }
        }
    }
}

pub struct StepScratch {
    n0: SpecFields,
    n1: SpecFields,
    n2: SpecFields,
    n3: SpecFields,
    s1: SpecFields,
    s2: SpecFields,
    s3: SpecFields,
}

impl StepScratch {
    pub fn new(fields: usize, spec_len: usize) -> Self {
        let make = || vec![vec![C64::new(0.0, 0.0); spec_len]; fields];
        StepScratch {
            n0: make(),
            n1: make(),
            n2: make(),
            n3: make(),
            s1: make(),
            s2: make(),
            s3: make(),
        }
    }
}
