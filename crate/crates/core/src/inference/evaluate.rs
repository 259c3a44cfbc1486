//! Per-dataset evaluation: autoregressive rollouts over the test split with
//! nRMSE aggregated at fixed horizons, emitted as a machine-readable table
//! (JSON) plus plot-ready CSV.

use std::path::PathBuf;

use serde::Serialize;

use super::rollout::rollout_network;
use super::sampler::SamplerConfig;
use super::Result;
use crate::fields::{read_dataset, split_trajectories, DatasetSplit, NormStats, Trajectory};
use crate::model::FieldTransformer;
use crate::tensor::Scalar;

#[derive(Debug, Clone, Serialize)]
pub struct EvalReportRow {
    pub dataset: String,
    pub horizon: usize,
    pub nrmse: f64,
    pub n_trajectories: usize,
    pub truncated_count: usize,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct EvalReport {
    pub rows: Vec<EvalReportRow>,
    /// Datasets skipped with the reason (e.g. unreadable file).
    pub skipped: Vec<String>,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "dataset,horizon,nrmse,n_trajectories,truncated_count";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{:.10},{},{}\n",
                r.dataset, r.horizon, r.nrmse, r.n_trajectories, r.truncated_count
            ));
        }
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("report serializes")
    }
}

#[derive(Debug, Clone)]
pub struct EvalSpec {
    pub horizons: Vec<usize>,
    /// Split fractions and seed must mirror the training run.
    pub fractions: (f64, f64, f64),
    pub split_seed: u64,
    pub sampler: Option<SamplerConfig>,
}

impl Default for EvalSpec {
    fn default() -> Self {
        EvalSpec {
            horizons: vec![1, 10, 20],
            fractions: ((5.0 / 6.0) * 0.85, (5.0 / 6.0) * 0.15, 1.0 / 6.0),
            split_seed: 0,
            sampler: None,
        }
    }
}

/// Evaluate one dataset: rollouts from the first snapshot of every test
/// trajectory; per-horizon nRMSE averaged over trajectories. Truncated
/// rollouts contribute worst-case 1.0 beyond truncation and are counted.
pub fn evaluate_dataset<T: Scalar>(
    model: &FieldTransformer<T>,
    name: &str,
    trajectories: &[Trajectory],
    split: &DatasetSplit,
    spec: &EvalSpec,
) -> Result<Vec<EvalReportRow>> {
    let stats = NormStats::from_train_split(trajectories, split)?;
    let max_h = spec.horizons.iter().copied().max().unwrap_or(1);
    let mut series_sum = vec![0.0f64; max_h];
    let mut truncated = 0usize;
    let test_ids = if split.test.is_empty() {
        // datasets with a separate test file: evaluate everything given
        (0..trajectories.len()).collect::<Vec<_>>()
    } else {
        split.test.clone()
    };
    let mut n_eval = 0usize;
    for &ti in &test_ids {
        let traj = &trajectories[ti];
        let steps = max_h.min(traj.len().saturating_sub(1));
        if steps == 0 {
            continue;
        }
        let res = rollout_network(model, &stats, traj, steps, spec.sampler)?;
        if res.truncated_at.is_some() {
            truncated += 1;
        }
        for h in 0..max_h {
            // horizons beyond the trajectory length score its final value
            let idx = h.min(res.nrmse_series.len() - 1);
            series_sum[h] += res.nrmse_series[idx];
        }
        n_eval += 1;
    }
    if n_eval == 0 {
        return Err(super::EvalError::Other(format!(
            "dataset {name} has no usable test trajectories"
        )));
    }
    Ok(spec
        .horizons
        .iter()
        .map(|&h| EvalReportRow {
            dataset: name.to_string(),
            horizon: h,
            nrmse: series_sum[h - 1] / n_eval as f64,
            n_trajectories: n_eval,
            truncated_count: truncated,
        })
        .collect())
}

/// Evaluate several dataset files; unreadable ones are skipped with a
/// warning recorded in the report.
pub fn evaluate_suite<T: Scalar>(
    model: &FieldTransformer<T>,
    datasets: &[(String, PathBuf)],
    spec: &EvalSpec,
) -> EvalReport {
    let mut report = EvalReport::default();
    for (name, path) in datasets {
        let trajs = match read_dataset(path) {
            Ok(t) => t,
            Err(e) => {
                eprintln!("warning: skipping dataset {name}: {e}");
                report.skipped.push(format!("{name}: {e}"));
                continue;
            }
        };
        let split = match split_trajectories(trajs.len(), spec.split_seed, spec.fractions) {
            Ok(s) => s,
            Err(e) => {
                report.skipped.push(format!("{name}: {e}"));
                continue;
            }
        };
        match evaluate_dataset(model, name, &trajs, &split, spec) {
            Ok(rows) => report.rows.extend(rows),
            Err(e) => {
                eprintln!("warning: skipping dataset {name}: {e}");
                report.skipped.push(format!("{name}: {e}"));
            }
        }
    }
    report
}
