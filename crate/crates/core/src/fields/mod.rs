//! Simulation data model: snapshots, trajectories with PDE metadata, the
//! on-disk `.pdet` dataset / `.pdet-ckpt` checkpoint containers, per-field
//! normalization, and train/val/test splitting.

pub mod container;
pub mod normalize;
pub mod split;

pub use container::{
    archive_dtype, dataset_summary, read_archive, read_dataset, write_archive, write_dataset,
    ArchiveKind,
};
pub use normalize::NormStats;
pub use split::{split_trajectories, DatasetSplit};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum FieldsError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    MagicMismatch { expected: String, found: String },
    #[error("truncated payload: needed {needed} bytes, had {available}")]
    Truncated { needed: usize, available: usize },
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("shape/manifest disagreement for {what}: manifest {manifest:?}, payload {payload:?}")]
    ShapeDisagreement {
        what: String,
        manifest: Vec<usize>,
        payload: Vec<usize>,
    },
    #[error("inconsistent trajectories: {0}")]
    Inconsistent(String),
    #[error("normalization stats have {stats} fields, data has {data}")]
    StatsFieldMismatch { stats: usize, data: usize },
    #[error("empty input: {0}")]
    Empty(String),
    #[error("invalid fractions {0:?}: each in [0,1] and sum <= 1 required")]
    BadFractions([f64; 3]),
}

pub type Result<T> = std::result::Result<T, FieldsError>;

/// Physical meaning of one data channel; part of the conditioning vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FieldKind {
    Density,
    Concentration,
    ConcentrationA,
    ConcentrationB,
    VelocityX,
    VelocityY,
    Vorticity,
}

impl FieldKind {
    pub const ALL: [FieldKind; 7] = [
        FieldKind::Density,
        FieldKind::Concentration,
        FieldKind::ConcentrationA,
        FieldKind::ConcentrationB,
        FieldKind::VelocityX,
        FieldKind::VelocityY,
        FieldKind::Vorticity,
    ];

    /// Stable id used for the channel-type label embedding.
    pub fn label_id(self) -> usize {
        Self::ALL.iter().position(|&k| k == self).unwrap()
    }
}

/// One stored time slice: `values` is `[fields, x, y]` in physical units.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub values: Tensor<f32>,
    pub field_types: Vec<FieldKind>,
    pub time: f64,
}

impl Snapshot {
    pub fn new(values: Tensor<f32>, field_types: Vec<FieldKind>, time: f64) -> Result<Self> {
        if values.rank() != 3 || values.shape()[0] != field_types.len() {
            return Err(FieldsError::Inconsistent(format!(
                "snapshot values {:?} vs {} field types",
                values.shape(),
                field_types.len()
            )));
        }
        Ok(Snapshot {
            values,
            field_types,
            time,
        })
    }

    pub fn num_fields(&self) -> usize {
        self.field_types.len()
    }

    pub fn resolution(&self) -> (usize, usize) {
        (self.values.shape()[1], self.values.shape()[2])
    }
}

/// Everything that varies across simulations: PDE kind, sampled physical
/// parameters, domain geometry, and the seed the run is reproducible from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub pde: String,
    pub params: BTreeMap<String, f64>,
    pub domain_extent: (f64, f64),
    pub periodic: (bool, bool),
    pub seed: u64,
    pub dt_store: f64,
    pub t0: f64,
}

/// Uniformly sampled sequence of snapshots; timestamps are exactly
/// `t0 + k * dt_store`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub snapshots: Vec<Snapshot>,
    pub meta: TrajectoryMeta,
}

impl Trajectory {
    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.snapshots.first() else {
            return Err(FieldsError::Empty("trajectory has no snapshots".into()));
        };
        for (k, s) in self.snapshots.iter().enumerate() {
            if s.values.shape() != first.values.shape() || s.field_types != first.field_types {
                return Err(FieldsError::Inconsistent(format!(
                    "snapshot {k} shape/fields differ from snapshot 0"
                )));
            }
            let expected = self.meta.t0 + k as f64 * self.meta.dt_store;
            if s.time != expected {
                return Err(FieldsError::Inconsistent(format!(
                    "snapshot {k} time {} != t0 + k*dt = {expected}",
                    s.time
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn num_fields(&self) -> usize {
        self.snapshots.first().map_or(0, Snapshot::num_fields)
    }

    pub fn resolution(&self) -> (usize, usize) {
        self.snapshots
            .first()
            .map_or((0, 0), Snapshot::resolution)
    }

    pub fn field_types(&self) -> &[FieldKind] {
        &self.snapshots[0].field_types
    }
}
