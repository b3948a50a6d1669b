//! Checkpoint container:
//!
//! ```text
//! magic    4 bytes  "CKPT"
//! version  u16 LE
//! meta     u32 LE length, then that many bytes of JSON (CheckpointMeta)
//! count    u32 LE number of tensors
//! tensor   u16 LE name length, name (UTF-8), u32 LE ndim, ndim × u64 LE dims,
//!          product(dims) float32 LE values (row-major)
//! ```
//!
//! Tensors are the model parameters under their [`TensorSpec`] names,
//! `input_mean` / `input_std`, and for SPD models `Q` / `lambda`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AcousticModel, ModelShape, TrainConfig};
use crate::error::{Error, Result};
use crate::features::FeatureConfig;
use crate::io::write_bytes;
use crate::linalg::Matrix;
use crate::spd::Eigenbasis;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CKPT";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub shape: ModelShape,
    pub param_count: usize,
    pub seed: u64,
    /// Phoneme symbols; the CTC blank is the class after the last one.
    pub inventory: Vec<String>,
    pub feature: Option<FeatureConfig>,
    pub train: Option<TrainConfig>,
    pub best_epoch: Option<usize>,
    pub best_val_loss: Option<f64>,
    /// The run configuration that produced this checkpoint.
    #[serde(default)]
    pub run_config: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub model: AcousticModel,
}

impl Checkpoint {
    pub fn new(model: AcousticModel, inventory: Vec<String>) -> Self {
        Checkpoint {
            meta: CheckpointMeta {
                shape: model.shape(),
                param_count: model.param_count(),
                seed: model.seed,
                inventory,
                feature: None,
                train: None,
                best_epoch: None,
                best_val_loss: None,
                run_config: BTreeMap::new(),
            },
            model,
        }
    }
}

fn put_tensor(out: &mut Vec<u8>, name: &str, dims: &[usize], data: &[f64]) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in data {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let model = &ckpt.model;
    let mut meta = ckpt.meta.clone();
    meta.shape = model.shape();
    meta.param_count = model.param_count();
    meta.seed = model.seed;
    let json = serde_json::to_vec(&meta).map_err(|e| Error::Format(format!("checkpoint metadata: {e}")))?;

    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    let count = model.tensor_specs().len() + 2 + if model.basis.is_some() { 2 } else { 0 };
    out.extend_from_slice(&(count as u32).to_le_bytes());
    for spec in model.tensor_specs() {
        let dims: Vec<usize> = if spec.is_vector {
            vec![spec.cols]
        } else {
            vec![spec.rows, spec.cols]
        };
        put_tensor(&mut out, &spec.name, &dims, &model.params[spec.range()]);
    }
    put_tensor(&mut out, "input_mean", &[model.input_mean.len()], &model.input_mean);
    put_tensor(&mut out, "input_std", &[model.input_std.len()], &model.input_std);
    if let Some(b) = &model.basis {
        put_tensor(&mut out, "Q", &[b.dim(), b.dim()], b.q.as_slice());
        put_tensor(&mut out, "lambda", &[b.dim()], &b.lambda);
    }
    Ok(out)
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    write_bytes(path, &encode_checkpoint(ckpt)?)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Truncation {
                expected: self.pos + n,
                found: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = r.u16()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let len = r.u32()? as usize;
    let meta: CheckpointMeta =
        serde_json::from_slice(r.take(len)?).map_err(|e| Error::Format(format!("checkpoint metadata: {e}")))?;
    let count = r.u32()? as usize;
    let mut tensors: BTreeMap<String, (Vec<usize>, Vec<f64>)> = BTreeMap::new();
    for _ in 0..count {
        let n = r.u16()? as usize;
        let name = String::from_utf8(r.take(n)?.to_vec())
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let ndim = r.u32()? as usize;
        let dims = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let total: usize = dims.iter().product();
        let raw = r.take(total.checked_mul(4).ok_or_else(|| Error::Format("tensor too large".into()))?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
            .collect();
        if tensors.insert(name.clone(), (dims, data)).is_some() {
            return Err(Error::Format(format!("duplicate tensor {name:?}")));
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes after tensors", bytes.len() - r.pos)));
    }

    let mut model = AcousticModel::new(meta.shape, meta.seed)?;
    if model.param_count() != meta.param_count {
        return Err(Error::Format(format!(
            "metadata declares {} parameters, shape implies {}",
            meta.param_count,
            model.param_count()
        )));
    }
    let take = |tensors: &mut BTreeMap<String, (Vec<usize>, Vec<f64>)>, name: &str, dims: &[usize]| -> Result<Vec<f64>> {
        let (d, data) = tensors
            .remove(name)
            .ok_or_else(|| Error::Format(format!("checkpoint lacks tensor {name:?}")))?;
        if d != dims {
            return Err(Error::Format(format!("tensor {name:?} has dims {d:?}, expected {dims:?}")));
        }
        Ok(data)
    };
    for spec in model.tensor_specs().to_vec() {
        let dims: Vec<usize> = if spec.is_vector {
            vec![spec.cols]
        } else {
            vec![spec.rows, spec.cols]
        };
        let data = take(&mut tensors, &spec.name, &dims)?;
        model.params[spec.range()].copy_from_slice(&data);
    }
    let d = meta.shape.input_dim;
    model.input_mean = take(&mut tensors, "input_mean", &[d])?;
    model.input_std = take(&mut tensors, "input_std", &[d])?;
    if let Some(n) = tensors.get("lambda").map(|(dims, _)| dims.first().copied().unwrap_or(0)) {
        let lambda = take(&mut tensors, "lambda", &[n])?;
        let q = take(&mut tensors, "Q", &[n, n])?;
        model.basis = Some(Eigenbasis {
            q: Matrix::from_vec(n, n, q)?,
            lambda,
        });
    }
    if let Some(name) = tensors.keys().next() {
        return Err(Error::Format(format!("unexpected tensor {name:?}")));
    }
    Ok(Checkpoint { meta, model })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
