//! Binary container formats.
//!
//! Both files share the same framing: an 8-byte ASCII magic, a little-endian
//! u64 manifest length, a UTF-8 JSON manifest, then raw little-endian float
//! payload blocks at the offsets the manifest declares.
//!
//! * `.pdet` (magic `PDETDATA`): trajectory datasets, always float32.
//! * `.pdet-ckpt` (magic `PDETCKPT`): named tensors (parameters, optimizer
//!   state, EMA weights) in float32 or float64, plus free-form JSON metadata.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{FieldKind, FieldsError, Result, Snapshot, Trajectory, TrajectoryMeta};
use crate::tensor::{Scalar, Tensor};

const DATA_MAGIC: &[u8; 8] = b"PDETDATA";
const CKPT_MAGIC: &[u8; 8] = b"PDETCKPT";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArchiveKind {
    Dataset,
    Checkpoint,
}

impl ArchiveKind {
    fn magic(self) -> &'static [u8; 8] {
        match self {
            ArchiveKind::Dataset => DATA_MAGIC,
            ArchiveKind::Checkpoint => CKPT_MAGIC,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetManifest {
    version: u32,
    dtype: String,
    trajectories: Vec<TrajectoryRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TrajectoryRecord {
    /// [steps, fields, x, y]
    shape: [usize; 4],
    field_types: Vec<FieldKind>,
    meta: TrajectoryMeta,
    offset: usize,
    len_bytes: usize,
}

fn io_err(path: &Path, source: std::io::Error) -> FieldsError {
    FieldsError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_framed(path: &Path, magic: &[u8; 8], manifest: &[u8], payload: &[u8]) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + manifest.len() + payload.len());
    buf.extend_from_slice(magic);
    buf.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
    buf.extend_from_slice(manifest);
    buf.extend_from_slice(payload);
    let mut f = fs::File::create(path).map_err(|e| io_err(path, e))?;
    f.write_all(&buf).map_err(|e| io_err(path, e))
}

fn read_framed(path: &Path, magic: &[u8; 8]) -> Result<(Value, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    if bytes.len() < 16 {
        return Err(FieldsError::Truncated {
            needed: 16,
            available: bytes.len(),
        });
    }
    if &bytes[..8] != magic {
        return Err(FieldsError::MagicMismatch {
            expected: String::from_utf8_lossy(magic).into_owned(),
            found: String::from_utf8_lossy(&bytes[..8]).into_owned(),
        });
    }
    let mlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    if bytes.len() < 16 + mlen {
        return Err(FieldsError::Truncated {
            needed: 16 + mlen,
            available: bytes.len(),
        });
    }
    let manifest: Value = serde_json::from_slice(&bytes[16..16 + mlen])
        .map_err(|e| FieldsError::Manifest(e.to_string()))?;
    Ok((manifest, bytes[16 + mlen..].to_vec()))
}

/// Write a `.pdet` dataset. Trajectories must be non-empty and share
/// shape/field types; the float payload roundtrips bitwise.
pub fn write_dataset(trajectories: &[Trajectory], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if trajectories.is_empty() {
        return Err(FieldsError::Empty("no trajectories to write".into()));
    }
    let first = &trajectories[0];
    first.validate()?;
    let (res_x, res_y) = first.resolution();
    let fields = first.num_fields();
    let mut records = Vec::with_capacity(trajectories.len());
    let mut payload = Vec::new();
    for (i, traj) in trajectories.iter().enumerate() {
        traj.validate()?;
        if traj.resolution() != (res_x, res_y) || traj.num_fields() != fields {
            return Err(FieldsError::Inconsistent(format!(
                "trajectory {i} shape differs from trajectory 0"
            )));
        }
        let offset = payload.len();
        for snap in &traj.snapshots {
            payload.extend_from_slice(&f32::to_le_bytes_vec(snap.values.data()));
        }
        records.push(TrajectoryRecord {
            shape: [traj.len(), fields, res_x, res_y],
            field_types: traj.field_types().to_vec(),
            meta: traj.meta.clone(),
            offset,
            len_bytes: payload.len() - offset,
        });
    }
    let manifest = DatasetManifest {
        version: 1,
        dtype: "f32".into(),
        trajectories: records,
    };
    let mbytes =
        serde_json::to_vec(&manifest).map_err(|e| FieldsError::Manifest(e.to_string()))?;
    write_framed(path, DATA_MAGIC, &mbytes, &payload)
}

/// Read a `.pdet` dataset written by [`write_dataset`].
pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<Trajectory>> {
    let path = path.as_ref();
    let (manifest, payload) = read_framed(path, DATA_MAGIC)?;
    let manifest: DatasetManifest =
        serde_json::from_value(manifest).map_err(|e| FieldsError::Manifest(e.to_string()))?;
    if manifest.dtype != "f32" {
        return Err(FieldsError::Manifest(format!(
            "unsupported dataset dtype {:?}",
            manifest.dtype
        )));
    }
    let mut out = Vec::with_capacity(manifest.trajectories.len());
    for rec in manifest.trajectories {
        let [steps, fields, res_x, res_y] = rec.shape;
        let expected_bytes = steps * fields * res_x * res_y * 4;
        if rec.len_bytes != expected_bytes {
            return Err(FieldsError::ShapeDisagreement {
                what: "trajectory block".into(),
                manifest: vec![steps, fields, res_x, res_y],
                payload: vec![rec.len_bytes / 4],
            });
        }
        let end = rec.offset + rec.len_bytes;
        if end > payload.len() {
            return Err(FieldsError::Truncated {
                needed: end,
                available: payload.len(),
            });
        }
        if rec.field_types.len() != fields {
            return Err(FieldsError::ShapeDisagreement {
                what: "field_types".into(),
                manifest: vec![fields],
                payload: vec![rec.field_types.len()],
            });
        }
        let values = f32::from_le_bytes_vec(&payload[rec.offset..end])
            .ok_or_else(|| FieldsError::Manifest("payload not 4-byte aligned".into()))?;
        let per_snap = fields * res_x * res_y;
        let snapshots = (0..steps)
            .map(|k| {
                Snapshot::new(
                    Tensor::new(
                        vec![fields, res_x, res_y],
                        values[k * per_snap..(k + 1) * per_snap].to_vec(),
                    )
                    .expect("checked above"),
                    rec.field_types.clone(),
                    rec.meta.t0 + k as f64 * rec.meta.dt_store,
                )
                .expect("field count checked")
            })
            .collect();
        out.push(Trajectory {
            snapshots,
            meta: rec.meta.clone(),
        });
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct ArchiveManifest {
    version: u32,
    dtype: String,
    meta: Value,
    tensors: Vec<TensorRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len_bytes: usize,
}

/// Write named tensors plus arbitrary JSON metadata (checkpoint framing).
pub fn write_archive<T: Scalar>(
    path: impl AsRef<Path>,
    kind: ArchiveKind,
    meta: Value,
    tensors: &[(String, &Tensor<T>)],
) -> Result<()> {
    let path = path.as_ref();
    let mut payload = Vec::new();
    let mut records = Vec::with_capacity(tensors.len());
    for (name, t) in tensors {
        let offset = payload.len();
        payload.extend_from_slice(&T::to_le_bytes_vec(t.data()));
        records.push(TensorRecord {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset,
            len_bytes: payload.len() - offset,
        });
    }
    let manifest = ArchiveManifest {
        version: 1,
        dtype: T::DTYPE.name().into(),
        meta,
        tensors: records,
    };
    let mbytes =
        serde_json::to_vec(&manifest).map_err(|e| FieldsError::Manifest(e.to_string()))?;
    write_framed(path, kind.magic(), &mbytes, &payload)
}

/// Read an archive written with [`write_archive`] at the same element type.
pub fn read_archive<T: Scalar>(
    path: impl AsRef<Path>,
    kind: ArchiveKind,
) -> Result<(Value, Vec<(String, Tensor<T>)>)> {
    let path = path.as_ref();
    let (manifest, payload) = read_framed(path, kind.magic())?;
    let manifest: ArchiveManifest =
        serde_json::from_value(manifest).map_err(|e| FieldsError::Manifest(e.to_string()))?;
    if manifest.dtype != T::DTYPE.name() {
        return Err(FieldsError::Manifest(format!(
            "archive dtype {:?} but reader expects {:?}",
            manifest.dtype,
            T::DTYPE.name()
        )));
    }
    let mut tensors = Vec::with_capacity(manifest.tensors.len());
    for rec in manifest.tensors {
        let numel: usize = rec.shape.iter().product();
        if rec.len_bytes != numel * T::DTYPE.size_bytes() {
            return Err(FieldsError::ShapeDisagreement {
                what: rec.name,
                manifest: rec.shape,
                payload: vec![rec.len_bytes / T::DTYPE.size_bytes()],
            });
        }
        let end = rec.offset + rec.len_bytes;
        if end > payload.len() {
            return Err(FieldsError::Truncated {
                needed: end,
                available: payload.len(),
            });
        }
        let data = T::from_le_bytes_vec(&payload[rec.offset..end])
            .ok_or_else(|| FieldsError::Manifest("payload misaligned".into()))?;
        tensors.push((
            rec.name,
            Tensor::new(rec.shape, data).expect("length checked"),
        ));
    }
    Ok((manifest.meta, tensors))
}

/// Element type stored in an archive ("f32"/"f64").
pub fn archive_dtype(path: impl AsRef<Path>, kind: ArchiveKind) -> Result<String> {
    let (manifest, _) = read_framed(path.as_ref(), kind.magic())?;
    let manifest: ArchiveManifest =
        serde_json::from_value(manifest).map_err(|e| FieldsError::Manifest(e.to_string()))?;
    Ok(manifest.dtype)
}

/// Dataset archive dtype/meta sniffing for CLI-level validation messages.
pub fn dataset_summary(path: impl AsRef<Path>) -> Result<(usize, [usize; 4])> {
    let (manifest, _) = read_framed(path.as_ref(), DATA_MAGIC)?;
    let manifest: DatasetManifest =
        serde_json::from_value(manifest).map_err(|e| FieldsError::Manifest(e.to_string()))?;
    let shape = manifest
        .trajectories
        .first()
        .map(|r| r.shape)
        .ok_or_else(|| FieldsError::Empty("dataset has no trajectories".into()))?;
    Ok((manifest.trajectories.len(), shape))
}
