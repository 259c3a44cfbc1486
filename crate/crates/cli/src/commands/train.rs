//! `pdet train`: run supervised or flow-matching training from a TOML
//! config. The run directory receives the resolved config, step metrics as
//! line-delimited JSON, periodic checkpoints, and the final checkpoint with
//! EMA weights.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::Args;

use pdet_core::fields::{read_dataset, split_trajectories};
use pdet_core::model::FieldTransformer;
use pdet_core::tensor::Scalar;
use pdet_core::training::{save_checkpoint, Schedule, TrainSet, Trainer};

use crate::config::RunConfig;
use crate::{init_threads, CliError, Result};

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// TOML run configuration
    #[arg(long)]
    pub config: PathBuf,
    /// Resume from a checkpoint inside the run directory
    #[arg(long)]
    pub resume: Option<PathBuf>,
    // flag overrides for the config file
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub out_dir: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub micro_batch: Option<usize>,
    #[arg(long)]
    pub precision: Option<String>,
    #[arg(long)]
    pub workers: Option<usize>,
}

pub fn load_config(args: &TrainArgs) -> Result<RunConfig> {
    let text = fs::read_to_string(&args.config)
        .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", args.config.display())))?;
    let mut cfg: RunConfig = toml::from_str(&text)
        .map_err(|e| CliError::Validation(vec![format!("config parse error: {e}")]))?;
    if let Some(v) = &args.dataset {
        cfg.data.dataset = v.clone();
    }
    if let Some(v) = &args.out_dir {
        cfg.out_dir = v.clone();
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.lr {
        cfg.train.lr = Some(v);
    }
    if let Some(v) = args.max_steps {
        cfg.train.max_steps = Some(v);
    }
    if let Some(v) = args.micro_batch {
        cfg.train.micro_batch = Some(v);
    }
    if let Some(v) = &args.precision {
        cfg.precision = v.clone();
    }
    Ok(cfg)
}

pub fn run(args: TrainArgs) -> Result<()> {
    init_threads(args.workers);
    let cfg = load_config(&args)?;
    match cfg.precision.as_str() {
        "f64" => run_typed::<f64>(&args, &cfg),
        _ => run_typed::<f32>(&args, &cfg),
    }
}

fn run_typed<T: Scalar>(args: &TrainArgs, cfg: &RunConfig) -> Result<()> {
    let (model_cfg, train_cfg) = cfg.resolve().map_err(CliError::Validation)?;

    let run_dir = Path::new(&cfg.out_dir);
    let ckpt_dir = run_dir.join("ckpt");
    fs::create_dir_all(&ckpt_dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", ckpt_dir.display())))?;
    let resolved =
        toml::to_string_pretty(cfg).map_err(|e| CliError::Runtime(e.to_string()))?;
    fs::write(run_dir.join("config.resolved"), resolved).map_err(CliError::runtime)?;

    let trajectories = read_dataset(&cfg.data.dataset).map_err(CliError::runtime)?;
    let split = split_trajectories(trajectories.len(), cfg.data.split_seed, cfg.data.fractions())
        .map_err(CliError::runtime)?;
    let data = TrainSet::new(&trajectories, &split).map_err(CliError::runtime)?;

    let (mut model, mut trainer_state) = match &args.resume {
        None => (
            FieldTransformer::<T>::build(model_cfg.clone(), cfg.seed).map_err(CliError::runtime)?,
            None,
        ),
        Some(path) => {
            let loaded =
                pdet_core::training::load_checkpoint::<T>(path).map_err(CliError::runtime)?;
            if loaded.model.config != model_cfg {
                return Err(CliError::Validation(vec![format!(
                    "checkpoint model config differs from run config ({} vs {})",
                    loaded.model.config.name, model_cfg.name
                )]));
            }
            (loaded.model, Some((loaded.opt, loaded.ema, loaded.clip, loaded.step)))
        }
    };

    let mut trainer = Trainer::new(&mut model, train_cfg.clone()).map_err(CliError::runtime)?;
    if let Some((opt, ema, clip, step)) = trainer_state.take() {
        if let Some(opt) = opt {
            trainer.opt = opt;
        }
        if let Some(ema) = ema {
            trainer.ema = ema;
        }
        trainer.clip = clip;
        trainer.step = step;
    }

    let total = train_cfg.total_steps(data.num_pairs());
    let remaining = total.saturating_sub(trainer.step as usize);
    let metrics_path = run_dir.join("metrics.jsonl");
    let mut metrics = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&metrics_path)
        .map_err(CliError::runtime)?;
    let checkpoint_every = cfg.train.checkpoint_every.unwrap_or(0);

    println!(
        "training {} ({} params, {}) for {remaining} steps on {} pairs",
        model_cfg.name,
        trainer.model.num_params(),
        cfg.precision,
        data.num_pairs()
    );
    let mut schedule = Schedule::new(data.num_pairs(), train_cfg.seed);
    for _ in 0..remaining {
        let m = trainer
            .run_step(&data, &mut schedule)
            .map_err(CliError::runtime)?;
        writeln!(metrics, "{}", serde_json::to_string(&m).unwrap()).map_err(CliError::runtime)?;
        if (m.step + 1) % 50 == 0 || m.step == 0 {
            println!("step {:>6}  loss {:.6}  |g| {:.4}", m.step, m.loss, m.grad_norm);
        }
        if checkpoint_every > 0 && (m.step + 1) % checkpoint_every as u64 == 0 {
            let path = ckpt_dir.join(format!("step_{:06}.pdet-ckpt", m.step + 1));
            save_checkpoint(
                &path,
                trainer.model,
                Some(&trainer.opt),
                Some(&trainer.ema),
                &trainer.clip,
                trainer.step,
                Some(&train_cfg),
            )
            .map_err(CliError::runtime)?;
        }
    }

    let final_path = ckpt_dir.join("final.pdet-ckpt");
    save_checkpoint(
        &final_path,
        trainer.model,
        Some(&trainer.opt),
        Some(&trainer.ema),
        &trainer.clip,
        trainer.step,
        Some(&train_cfg),
    )
    .map_err(CliError::runtime)?;
    println!("final checkpoint: {}", final_path.display());
    Ok(())
}
