//! `pdet gen`: simulate trajectories of one PDE setup and write a `.pdet`
//! dataset. Trajectories are independent, so generation parallelizes across
//! workers; a fixed seed yields bitwise identical files.

use clap::Args;
use rayon::prelude::*;

use pdet_core::fields::write_dataset;
use pdet_core::spectral::{simulate, PdeKind, SolverSpec};

use crate::{init_threads, CliError, Result};

#[derive(Args, Debug)]
pub struct GenArgs {
    /// PDE kind (diff, fisher, sh, gs-alpha..gs-kappa, burgers, kdv, ks,
    /// decay-turb, kolm-flow)
    #[arg(long)]
    pub pde: String,
    /// Square resolution (power of two, max 256)
    #[arg(long, default_value_t = 64)]
    pub res: usize,
    /// Number of trajectories
    #[arg(long, default_value_t = 60)]
    pub traj: usize,
    /// Stored snapshots per trajectory
    #[arg(long, default_value_t = 30)]
    pub steps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file (defaults to <pde>.pdet)
    #[arg(long)]
    pub out: Option<String>,
    /// Solver substeps override (default: per-PDE recipe value)
    #[arg(long)]
    pub substeps: Option<usize>,
    /// Warmup override in stored steps (default: per-PDE recipe value)
    #[arg(long)]
    pub warmup: Option<usize>,
    /// Worker cap for this invocation
    #[arg(long)]
    pub workers: Option<usize>,
}

pub fn validate(args: &GenArgs) -> std::result::Result<PdeKind, Vec<String>> {
    let mut errors = Vec::new();
    let kind = match PdeKind::from_name(&args.pde) {
        Ok(k) => Some(k),
        Err(_) => {
            let names: Vec<&str> = PdeKind::ALL.iter().map(|k| k.name()).collect();
            errors.push(format!(
                "--pde: unknown kind {:?}; expected one of {}",
                args.pde,
                names.join(", ")
            ));
            None
        }
    };
    if !args.res.is_power_of_two() || args.res < 8 || args.res > 256 {
        errors.push(format!(
            "--res: {} must be a power of two in [8, 256]",
            args.res
        ));
    }
    if args.traj == 0 {
        errors.push("--traj: must be >= 1".into());
    }
    if args.steps == 0 {
        errors.push("--steps: must be >= 1".into());
    }
    if args.substeps == Some(0) {
        errors.push("--substeps: must be >= 1".into());
    }
    match kind {
        Some(k) if errors.is_empty() => Ok(k),
        _ => Err(errors),
    }
}

pub fn run(args: GenArgs) -> Result<()> {
    let kind = validate(&args).map_err(CliError::Validation)?;
    init_threads(args.workers);
    let out = args.out.clone().unwrap_or(format!("{}.pdet", kind.name()));

    let specs: Vec<SolverSpec> = (0..args.traj)
        .map(|i| {
            let mut spec = SolverSpec::recipe(kind, args.res, args.steps, args.seed.wrapping_add(i as u64));
            if let Some(s) = args.substeps {
                spec.substeps = s;
            }
            if let Some(w) = args.warmup {
                spec.warmup_steps = w;
            }
            spec
        })
        .collect();
    let trajectories: Vec<_> = specs
        .par_iter()
        .map(simulate)
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(CliError::runtime)?;

    write_dataset(&trajectories, &out).map_err(CliError::runtime)?;
    let (x, y) = trajectories[0].resolution();
    println!(
        "wrote {} trajectories of {} steps ({} fields, {}x{}) to {}",
        trajectories.len(),
        trajectories[0].len(),
        trajectories[0].num_fields(),
        x,
        y,
        out
    );
    Ok(())
}
