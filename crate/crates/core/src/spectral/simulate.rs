//! Runs one [`SolverSpec`] to a [`Trajectory`]: sample initial conditions,
//! integrate warmup intervals, then record stored snapshots with blow-up
//! detection.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::etdrk::{tables2, tables4, Nonlinear, SpecFields, StepScratch, Stepper};
use super::fft::C64;
use super::ic;
use super::pdes::{self, SpectralOps};
use super::{PdeKind, SolverError, SolverSpec};
use crate::fields::{Snapshot, Trajectory, TrajectoryMeta};
use crate::tensor::Tensor;

const BLOWUP_THRESHOLD: f64 = 1e6;

enum Rhs {
    Zero(pdes::ZeroNonlinear),
    Fisher(pdes::FisherNonlinear),
    Sh(pdes::ShNonlinear),
    GrayScott(pdes::GrayScottNonlinear),
    Burgers(pdes::BurgersNonlinear),
    Kdv(pdes::KdvNonlinear),
    Ks(pdes::KsNonlinear),
    Vorticity(pdes::VorticityNonlinear),
}

impl Nonlinear for Rhs {
    fn eval(&mut self, state: &SpecFields, out: &mut SpecFields) {
        match self {
            Rhs::Zero(n) => n.eval(state, out),
            Rhs::Fisher(n) => n.eval(state, out),
            Rhs::Sh(n) => n.eval(state, out),
            Rhs::GrayScott(n) => n.eval(state, out),
            Rhs::Burgers(n) => n.eval(state, out),
            Rhs::Kdv(n) => n.eval(state, out),
            Rhs::Ks(n) => n.eval(state, out),
            Rhs::Vorticity(n) => n.eval(state, out),
        }
    }
}

fn build_rhs(spec: &SolverSpec) -> (Vec<Vec<C64>>, Rhs) {
    let (nx, ny) = spec.resolution;
    let (lx, ly) = spec.domain_extent;
    let mut ops = SpectralOps::new(nx, ny, lx, ly, 5);
    let wn = &ops.wn;
    match spec.pde {
        PdeKind::Diff => (
            pdes::linear::diff(wn, spec.param("viscosity_x"), spec.param("viscosity_y")),
            Rhs::Zero(pdes::ZeroNonlinear),
        ),
        PdeKind::Fisher => {
            let linear = pdes::linear::fisher(wn, spec.param("diffusivity"), spec.param("reactivity"));
            let reactivity = spec.param("reactivity");
            (linear, Rhs::Fisher(pdes::FisherNonlinear { reactivity, ops }))
        }
        PdeKind::Sh => {
            let linear =
                pdes::linear::swift_hohenberg(wn, spec.param("reactivity"), spec.param("critical_number"));
            (linear, Rhs::Sh(pdes::ShNonlinear { ops }))
        }
        k if k.is_gray_scott() => {
            let linear = pdes::linear::gray_scott(wn, spec.param("d_a"), spec.param("d_b"));
            (
                linear,
                Rhs::GrayScott(pdes::GrayScottNonlinear {
                    feed: spec.param("feed_rate"),
                    kill: spec.param("kill_rate"),
                    ops,
                }),
            )
        }
        PdeKind::Burgers => (
            pdes::linear::burgers(wn, spec.param("viscosity")),
            Rhs::Burgers(pdes::BurgersNonlinear { ops }),
        ),
        PdeKind::Kdv => (
            pdes::linear::kdv(wn, spec.param("dispersivity"), spec.param("viscosity")),
            Rhs::Kdv(pdes::KdvNonlinear {
                convection: spec.param("convection"),
                ops,
            }),
        ),
        PdeKind::Ks => (pdes::linear::ks(wn), Rhs::Ks(pdes::KsNonlinear { ops })),
        PdeKind::DecayTurb => (
            pdes::linear::vorticity(wn, spec.param("viscosity")),
            Rhs::Vorticity(pdes::VorticityNonlinear { ops, forcing: None }),
        ),
        PdeKind::KolmFlow => {
            let linear = pdes::linear::vorticity(wn, spec.param("viscosity"));
            let forcing = pdes::VorticityNonlinear::kolmogorov_forcing(
                &mut ops,
                spec.param("forcing_wavenumber"),
                spec.param("forcing_amplitude"),
            );
            (
                linear,
                Rhs::Vorticity(pdes::VorticityNonlinear {
                    ops,
                    forcing: Some(forcing),
                }),
            )
        }
        _ => unreachable!(),
    }
}

/// Initial condition fields in real space, `[field][nx*ny]`, deterministic
/// for a given spec.
pub fn initial_fields(spec: &SolverSpec) -> Result<Vec<Vec<f64>>, SolverError> {
    spec.validate()?;
    let (nx, ny) = spec.resolution;
    // IC draws use a stream separate from parameter sampling
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x6a09e667f3bcc908);
    if spec.pde.is_gray_scott() {
        let region = if spec.pde == PdeKind::GsKappa { 0.2 } else { 0.6 };
        let (c_a, c_b) =
            ic::ic_gaussian_blobs(nx, ny, spec.domain_extent, 4, region, &mut rng);
        return Ok(vec![c_a, c_b]);
    }
    let mut fft = super::fft::Rfft2::new(nx, ny);
    let mut fields = Vec::with_capacity(spec.pde.num_fields());
    for _ in 0..spec.pde.num_fields() {
        let mut f = ic::ic_random_spectral(&mut fft, &mut rng);
        if spec.pde == PdeKind::Fisher {
            for v in f.iter_mut() {
                *v = v.clamp(0.0, 1.0);
            }
        }
        fields.push(f);
    }
    Ok(fields)
}

/// Simulate from the spec's own sampled initial condition.
pub fn simulate(spec: &SolverSpec) -> Result<Trajectory, SolverError> {
    let fields = initial_fields(spec)?;
    simulate_from(spec, fields)
}

/// Simulate from caller-provided real-space initial fields.
pub fn simulate_from(spec: &SolverSpec, fields: Vec<Vec<f64>>) -> Result<Trajectory, SolverError> {
    spec.validate()?;
    let (nx, ny) = spec.resolution;
    let n_fields = spec.pde.num_fields();
    assert_eq!(fields.len(), n_fields, "field count mismatch");

    let (linear, mut rhs) = build_rhs(spec);
    let dt_sub = spec.dt_store / spec.substeps as f64;
    let stepper = match spec.pde.etdrk_order() {
        2 => Stepper::Two(linear.iter().map(|l| tables2(l, dt_sub)).collect()),
        _ => Stepper::Four(linear.iter().map(|l| tables4(l, dt_sub)).collect()),
    };

    let mut io = super::fft::Rfft2::new(nx, ny);
    let spec_len = io.spec_len();
    let mut state: SpecFields = fields
        .iter()
        .map(|f| {
            let mut s = vec![C64::new(0.0, 0.0); spec_len];
            io.forward(f, &mut s);
            s
        })
        .collect();
    let mut scratch = StepScratch::new(n_fields, spec_len);

    let mut real = vec![0.0f64; nx * ny];
    let check_state = |state: &SpecFields,
                           io: &mut super::fft::Rfft2,
                           real: &mut Vec<f64>,
                           step: usize|
     -> Result<Vec<f32>, SolverError> {
        let mut snapshot = Vec::with_capacity(n_fields * nx * ny);
        for f in state {
            let mut copy = f.clone();
            io.inverse(&mut copy, real);
            let mut max = 0.0f64;
            for &v in real.iter() {
                if !v.is_finite() {
                    return Err(SolverError::NonFinite {
                        pde: spec.pde.name(),
                        dt: spec.dt_store,
                        step,
                    });
                }
                max = max.max(v.abs());
            }
            if max > BLOWUP_THRESHOLD {
                return Err(SolverError::Unstable {
                    pde: spec.pde.name(),
                    dt: spec.dt_store,
                    step,
                    max,
                });
            }
            snapshot.extend(real.iter().map(|&v| v as f32));
        }
        Ok(snapshot)
    };

    for _ in 0..spec.warmup_steps {
        for _ in 0..spec.substeps {
            stepper.step(&mut state, &mut rhs, &mut scratch);
        }
    }
    // re-anchor time at zero after warmup
    let field_types = spec.pde.field_types();
    let mut snapshots = Vec::with_capacity(spec.steps);
    let first = check_state(&state, &mut io, &mut real, 0)?;
    snapshots.push(make_snapshot(first, &field_types, nx, ny, 0.0));
    for step in 1..spec.steps {
        for _ in 0..spec.substeps {
            stepper.step(&mut state, &mut rhs, &mut scratch);
        }
        let data = check_state(&state, &mut io, &mut real, step)?;
        snapshots.push(make_snapshot(
            data,
            &field_types,
            nx,
            ny,
            step as f64 * spec.dt_store,
        ));
    }

    Ok(Trajectory {
        snapshots,
        meta: TrajectoryMeta {
            pde: spec.pde.name().to_string(),
            params: spec.params.clone(),
            domain_extent: spec.domain_extent,
            periodic: (true, true),
            seed: spec.seed,
            dt_store: spec.dt_store,
            t0: 0.0,
        },
    })
}

fn make_snapshot(
    data: Vec<f32>,
    field_types: &[crate::fields::FieldKind],
    nx: usize,
    ny: usize,
    time: f64,
) -> Snapshot {
    Snapshot::new(
        Tensor::new(vec![field_types.len(), nx, ny], data).expect("sized by construction"),
        field_types.to_vec(),
        time,
    )
    .expect("field count consistent")
}

#[cfg(test)]
mod tests {
    use super::super::fft::{Rfft2, WaveNumbers};
    use super::*;
    use std::collections::BTreeMap;

    fn small_spec(pde: PdeKind, res: usize, steps: usize, seed: u64) -> SolverSpec {
        let mut spec = SolverSpec::recipe(pde, res, steps, seed);
        spec.resolution = (res, res);
        spec
    }

    #[test]
    fn heat_equation_matches_analytic_decay() {
        let mut spec = small_spec(PdeKind::Diff, 64, 30, 11);
        spec.params.insert("viscosity_x".into(), 0.01);
        spec.params.insert("viscosity_y".into(), 0.02);
        let ic = initial_fields(&spec).unwrap();
        let traj = simulate_from(&spec, ic.clone()).unwrap();

        // oracle: exact per-mode decay of the initial spectrum
        let (nx, ny) = spec.resolution;
        let mut fft = Rfft2::new(nx, ny);
        let wn = WaveNumbers::new(nx, ny, 1.0, 1.0);
        let mut spec0 = vec![C64::new(0.0, 0.0); fft.spec_len()];
        fft.forward(&ic[0], &mut spec0);
        for (k, snap) in traj.snapshots.iter().enumerate() {
            let t = k as f64 * spec.dt_store;
            let mut decayed = spec0.clone();
            for i in 0..nx {
                for j in 0..wn.nyh {
                    let rate = 0.01 * wn.kx[i] * wn.kx[i] + 0.02 * wn.ky[j] * wn.ky[j];
                    decayed[i * wn.nyh + j] *= (-rate * t).exp();
                }
            }
            let mut expect = vec![0.0f64; nx * ny];
            fft.inverse(&mut decayed, &mut expect);
            let mut num = 0.0;
            let mut den = 0.0;
            for (a, &e) in snap.values.data().iter().zip(&expect) {
                num += (*a as f64 - e).powi(2);
                den += e * e;
            }
            let rel = (num / den.max(1e-300)).sqrt();
            // trajectory payload is f32, so the analytic comparison is
            // limited by storage precision, not the integrator
            assert!(rel < 1e-6, "step {k}: rel l2 {rel}");
        }
    }

    #[test]
    fn heat_equation_exact_in_f64_before_storage() {
        // same check against the solver's internal f64 path: one stored step
        let (nx, ny) = (32, 32);
        let wn = WaveNumbers::new(nx, ny, 1.0, 1.0);
        let linear = pdes::linear::diff(&wn, 0.013, 0.037);
        let dt = 0.01;
        let stepper = Stepper::Two(vec![tables2(&linear[0], dt)]);
        let mut fft = Rfft2::new(nx, ny);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let field: Vec<f64> = (0..nx * ny).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut state = vec![vec![C64::new(0.0, 0.0); fft.spec_len()]];
        fft.forward(&field, &mut state[0]);
        let initial = state[0].clone();
        let mut scratch = StepScratch::new(1, fft.spec_len());
        let steps = 30;
        for _ in 0..steps {
            stepper.step(&mut state, &mut pdes::ZeroNonlinear, &mut scratch);
        }
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..nx {
            for j in 0..wn.nyh {
                let rate = 0.013 * wn.kx[i] * wn.kx[i] + 0.037 * wn.ky[j] * wn.ky[j];
                let expect = initial[i * wn.nyh + j] * (-rate * dt * steps as f64).exp();
                num += (state[0][i * wn.nyh + j] - expect).norm_sqr();
                den += expect.norm_sqr();
            }
        }
        let rel = (num / den).sqrt();
        assert!(rel < 1e-10, "rel l2 {rel}");
    }

    #[test]
    fn burgers_preserves_spatial_means() {
        let mut spec = small_spec(PdeKind::Burgers, 32, 10, 5);
        spec.substeps = 20;
        let traj = simulate(&spec).unwrap();
        let n = (32 * 32) as f64;
        let mean_of = |snap: &Snapshot, f: usize| -> f64 {
            snap.values.data()[f * 1024..(f + 1) * 1024]
                .iter()
                .map(|&v| v as f64)
                .sum::<f64>()
                / n
        };
        for f in 0..2 {
            let m0 = mean_of(&traj.snapshots[0], f);
            for snap in &traj.snapshots {
                assert!((mean_of(snap, f) - m0).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn kdv_inviscid_preserves_spatial_means() {
        let mut spec = small_spec(PdeKind::Kdv, 32, 8, 2);
        spec.params.insert("viscosity".into(), 0.0);
        let traj = simulate(&spec).unwrap();
        let n = (32 * 32) as f64;
        for f in 0..2 {
            let m0: f64 = traj.snapshots[0].values.data()[f * 1024..(f + 1) * 1024]
                .iter()
                .map(|&v| v as f64)
                .sum::<f64>()
                / n;
            for snap in &traj.snapshots {
                let m: f64 = snap.values.data()[f * 1024..(f + 1) * 1024]
                    .iter()
                    .map(|&v| v as f64)
                    .sum::<f64>()
                    / n;
                assert!((m - m0).abs() < 1e-8, "mean drifted: {m0} -> {m}");
            }
        }
    }

    #[test]
    fn fixed_seed_is_bitwise_reproducible() {
        let spec = small_spec(PdeKind::Burgers, 32, 5, 9);
        let a = simulate(&spec).unwrap();
        let b = simulate(&spec).unwrap();
        for (sa, sb) in a.snapshots.iter().zip(&b.snapshots) {
            let bits_a: Vec<u32> = sa.values.data().iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u32> = sb.values.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b);
        }
    }

    #[test]
    fn periodic_translation_equivariance() {
        let mut spec = small_spec(PdeKind::Burgers, 32, 5, 3);
        spec.substeps = 10;
        let ic = initial_fields(&spec).unwrap();
        let (sx, sy) = (5usize, 3usize);
        let roll = |f: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; 32 * 32];
            for x in 0..32 {
                for y in 0..32 {
                    out[((x + sx) % 32) * 32 + (y + sy) % 32] = f[x * 32 + y];
                }
            }
            out
        };
        let rolled_ic: Vec<Vec<f64>> = ic.iter().map(|f| roll(f)).collect();
        let base = simulate_from(&spec, ic).unwrap();
        let shifted = simulate_from(&spec, rolled_ic).unwrap();
        for (sa, sb) in base.snapshots.iter().zip(&shifted.snapshots) {
            for f in 0..2 {
                let block_a: Vec<f64> = sa.values.data()[f * 1024..(f + 1) * 1024]
                    .iter()
                    .map(|&v| v as f64)
                    .collect();
                let rolled_a = roll(&block_a);
                let mut num = 0.0;
                let mut den = 0.0;
                for (x, y) in rolled_a
                    .iter()
                    .zip(&sb.values.data()[f * 1024..(f + 1) * 1024])
                {
                    num += (x - *y as f64).powi(2);
                    den += x * x;
                }
                assert!((num / den.max(1e-30)).sqrt() < 1e-6);
            }
        }
    }

    #[test]
    fn fisher_self_convergence_is_second_order() {
        // smooth single-mode start, compare against a fine reference
        let mut spec = small_spec(PdeKind::Fisher, 32, 3, 7);
        spec.params.insert("diffusivity".into(), 0.002);
        spec.params.insert("reactivity".into(), 8.0);
        let mut ic = vec![vec![0.0f64; 32 * 32]];
        for x in 0..32 {
            for y in 0..32 {
                ic[0][x * 32 + y] = 0.4
                    + 0.2 * (std::f64::consts::TAU * x as f64 / 32.0).sin()
                        * (std::f64::consts::TAU * y as f64 / 32.0).cos();
            }
        }
        let run = |substeps: usize| {
            let mut s = spec.clone();
            s.substeps = substeps;
            simulate_from(&s, ic.clone()).unwrap()
        };
        let coarse = run(2);
        let mid = run(4);
        let fine = run(16);
        let err = |a: &Trajectory, b: &Trajectory| {
            let mut e = 0.0f64;
            for (sa, sb) in a.snapshots.iter().zip(&b.snapshots) {
                for (x, y) in sa.values.data().iter().zip(sb.values.data()) {
                    e = e.max((x - y).abs() as f64);
                }
            }
            e
        };
        let e1 = err(&coarse, &fine);
        let e2 = err(&mid, &fine);
        let order = (e1 / e2).log2();
        assert!(order >= 1.8, "observed order {order} (e1={e1:.3e}, e2={e2:.3e})");
    }

    #[test]
    fn decaying_turbulence_enstrophy_non_increasing() {
        let mut spec = small_spec(PdeKind::DecayTurb, 32, 8, 6);
        spec.substeps = 50;
        spec.params.insert("viscosity".into(), 0.0005);
        let traj = simulate(&spec).unwrap();
        let enstrophy = |snap: &Snapshot| -> f64 {
            snap.values.data().iter().map(|&v| (v as f64).powi(2)).sum()
        };
        let mut prev = f64::INFINITY;
        for snap in &traj.snapshots {
            let e = enstrophy(snap);
            assert!(e <= prev * (1.0 + 1e-9), "enstrophy grew: {prev} -> {e}");
            prev = e;
        }
    }

    #[test]
    fn blow_up_aborts_with_diagnostic() {
        let mut spec = small_spec(PdeKind::Diff, 32, 10, 0);
        // backwards heat: exponential growth trips the stability check
        spec.params.insert("viscosity_x".into(), -0.05);
        spec.params.insert("viscosity_y".into(), -0.05);
        let err = simulate(&spec).unwrap_err();
        match err {
            SolverError::Unstable { pde, .. } | SolverError::NonFinite { pde, .. } => {
                assert_eq!(pde, "diff");
            }
            other => panic!("expected stability error, got {other}"),
        }
    }

    #[test]
    fn gray_scott_runs_and_keeps_two_fields() {
        let mut spec = small_spec(PdeKind::GsAlpha, 32, 3, 4);
        spec.warmup_steps = 1;
        spec.substeps = 10; // shortened cadence for the smoke test
        let traj = simulate(&spec).unwrap();
        assert_eq!(traj.num_fields(), 2);
        assert_eq!(traj.len(), 3);
        traj.validate().unwrap();
    }

    #[test]
    fn ks_and_kolmogorov_run_stably_at_small_scale() {
        let mut ks = small_spec(PdeKind::Ks, 32, 4, 8);
        ks.warmup_steps = 5;
        let t = simulate(&ks).unwrap();
        assert_eq!(t.len(), 4);

        let mut kf = small_spec(PdeKind::KolmFlow, 32, 3, 8);
        kf.warmup_steps = 2;
        kf.substeps = 60;
        kf.params.insert("viscosity".into(), 0.002);
        let t = simulate(&kf).unwrap();
        // forcing keeps energy nonzero
        let last = t.snapshots.last().unwrap();
        let energy: f64 = last.values.data().iter().map(|&v| (v as f64).powi(2)).sum();
        assert!(energy > 1e-6);
    }

    #[test]
    fn missing_params_detected_before_running() {
        let spec = SolverSpec {
            pde: PdeKind::Burgers,
            resolution: (32, 32),
            domain_extent: (1.0, 1.0),
            dt_store: 0.01,
            substeps: 10,
            steps: 3,
            warmup_steps: 0,
            params: BTreeMap::new(),
            seed: 0,
        };
        assert!(matches!(
            simulate(&spec),
            Err(SolverError::MissingParam { .. })
        ));
    }

    use rand::Rng;
}
