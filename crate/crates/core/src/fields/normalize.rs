//! Per-field z-score normalization. Statistics must come from the training
//! split only; [`NormStats::from_train_split`] is the supported way to build
//! them, so val/test data never influences the scaling.

use serde::{Deserialize, Serialize};

use super::{DatasetSplit, FieldsError, Result, Snapshot, Trajectory};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    /// Identity statistics for `fields` channels.
    pub fn identity(fields: usize) -> Self {
        NormStats {
            mean: vec![0.0; fields],
            std: vec![1.0; fields],
        }
    }

    /// Mean/std per field over the trajectories selected by `split.train`.
    pub fn from_train_split(trajectories: &[Trajectory], split: &DatasetSplit) -> Result<Self> {
        let view: Vec<&Trajectory> = split
            .train
            .iter()
            .map(|&i| &trajectories[i])
            .collect();
        Self::from_trajectories(&view)
    }

    pub fn from_trajectories(trajectories: &[&Trajectory]) -> Result<Self> {
        let first = trajectories
            .first()
            .ok_or_else(|| FieldsError::Empty("no trajectories for statistics".into()))?;
        let fields = first.num_fields();
        let mut sum = vec![0.0f64; fields];
        let mut sum_sq = vec![0.0f64; fields];
        let mut count = vec![0.0f64; fields];
        for traj in trajectories {
            if traj.num_fields() != fields {
                return Err(FieldsError::StatsFieldMismatch {
                    stats: fields,
                    data: traj.num_fields(),
                });
            }
            for snap in &traj.snapshots {
                let (x, y) = snap.resolution();
                let per_field = x * y;
                for f in 0..fields {
                    let block = &snap.values.data()[f * per_field..(f + 1) * per_field];
                    for &v in block {
                        sum[f] += v as f64;
                        sum_sq[f] += (v as f64) * (v as f64);
                    }
                    count[f] += per_field as f64;
                }
            }
        }
        let mean: Vec<f64> = (0..fields).map(|f| sum[f] / count[f]).collect();
        let std: Vec<f64> = (0..fields)
            .map(|f| (sum_sq[f] / count[f] - mean[f] * mean[f]).max(0.0).sqrt())
            .collect();
        Ok(NormStats { mean, std })
    }

    /// Std guarded against degenerate (constant) fields; those normalize with
    /// scale 1 so the transform stays invertible.
    pub fn guarded_std(&self, field: usize) -> f64 {
        let s = self.std[field];
        if s > 1e-12 {
            s
        } else {
            eprintln!(
                "warning: field {field} has zero variance; normalizing with std=1"
            );
            1.0
        }
    }
}

fn apply(traj: &Trajectory, stats: &NormStats, forward: bool) -> Result<Trajectory> {
    if stats.mean.len() != traj.num_fields() {
        return Err(FieldsError::StatsFieldMismatch {
            stats: stats.mean.len(),
            data: traj.num_fields(),
        });
    }
    let snapshots = traj
        .snapshots
        .iter()
        .map(|snap| {
            let (x, y) = snap.resolution();
            let per_field = x * y;
            let mut data = snap.values.data().to_vec();
            for f in 0..snap.num_fields() {
                let mean = stats.mean[f];
                let std = stats.guarded_std(f);
                for v in &mut data[f * per_field..(f + 1) * per_field] {
                    let x = *v as f64;
                    *v = if forward {
                        ((x - mean) / std) as f32
                    } else {
                        (x * std + mean) as f32
                    };
                }
            }
            Snapshot {
                values: Tensor::new(snap.values.shape().to_vec(), data).unwrap(),
                field_types: snap.field_types.clone(),
                time: snap.time,
            }
        })
        .collect();
    Ok(Trajectory {
        snapshots,
        meta: traj.meta.clone(),
    })
}

pub fn normalize(traj: &Trajectory, stats: &NormStats) -> Result<Trajectory> {
    apply(traj, stats, true)
}

pub fn denormalize(traj: &Trajectory, stats: &NormStats) -> Result<Trajectory> {
    apply(traj, stats, false)
}

#[cfg(test)]
mod tests {
    use super::super::tests::toy_trajectory;
    use super::*;

    #[test]
    fn roundtrip_within_tolerance() {
        let traj = toy_trajectory(4, 2, 8, 3);
        let stats = NormStats::from_trajectories(&[&traj]).unwrap();
        let norm = normalize(&traj, &stats).unwrap();
        let back = denormalize(&norm, &stats).unwrap();
        for (a, b) in traj.snapshots.iter().zip(&back.snapshots) {
            for (x, y) in a.values.data().iter().zip(b.values.data()) {
                let rel = (x - y).abs() / x.abs().max(1.0);
                assert!(rel < 1e-6, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn zero_mean_unit_std_input_unchanged() {
        let traj = toy_trajectory(4, 1, 8, 5);
        let stats = NormStats::identity(1);
        let norm = normalize(&traj, &stats).unwrap();
        assert_eq!(traj, norm);
    }

    #[test]
    fn constant_field_normalizes_to_zero() {
        let mut traj = toy_trajectory(2, 1, 4, 0);
        for snap in &mut traj.snapshots {
            for v in snap.values.data_mut() {
                *v = 7.5;
            }
        }
        let stats = NormStats::from_trajectories(&[&traj]).unwrap();
        assert!(stats.std[0] < 1e-9);
        let norm = normalize(&traj, &stats).unwrap();
        for snap in &norm.snapshots {
            assert!(snap.values.data().iter().all(|&v| v.abs() < 1e-6));
        }
    }

    #[test]
    fn stats_field_count_mismatch_rejected() {
        let traj = toy_trajectory(2, 2, 4, 0);
        let stats = NormStats::identity(1);
        assert!(matches!(
            normalize(&traj, &stats),
            Err(FieldsError::StatsFieldMismatch { .. })
        ));
    }
}
