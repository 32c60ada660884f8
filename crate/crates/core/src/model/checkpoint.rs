//! Checkpoint layout: magic, `u64` manifest length, JSON manifest, then a
//! contiguous little-endian `f64` payload. The manifest lists every tensor
//! as (name, shape, offset) into the payload.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DynBerg, ModelConfig};
use crate::autodiff::{Adam, ParamStore, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"DYNBERGC";
const FORMAT: u32 = 1;

/// Optimizer moments keyed by parameter name.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub params: Vec<String>,
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn capture(adam: &Adam, store: &ParamStore) -> Self {
        let mut s = Self {
            step: adam.step_count(),
            params: Vec::new(),
            first: Vec::new(),
            second: Vec::new(),
        };
        for (slot, &id) in adam.params().iter().enumerate() {
            let (m, v) = adam.moments(slot);
            s.params.push(store.name(id).to_string());
            s.first.push(m.to_vec());
            s.second.push(v.to_vec());
        }
        s
    }

    /// Loads the moments into `adam`, which must manage the same parameters
    /// in the same order.
    pub fn restore_into(&self, adam: &mut Adam, store: &ParamStore) -> Result<()> {
        let names: Vec<&str> = adam.params().iter().map(|&id| store.name(id)).collect();
        if names != self.params.iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(Error::Checkpoint(format!(
                "optimizer parameters differ: checkpoint {:?}, run {:?}",
                self.params, names
            )));
        }
        adam.restore(self.step, self.first.clone(), self.second.clone())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub seed: u64,
    pub epoch: usize,
    pub params: Vec<(String, Tensor)>,
    pub optimizers: Vec<(String, AdamState)>,
    /// Free-form run settings stored alongside the weights.
    pub meta: serde_json::Value,
}

impl Checkpoint {
    pub fn from_model(model: &DynBerg, seed: u64, epoch: usize) -> Self {
        Self {
            model: model.config().clone(),
            seed,
            epoch,
            params: model.export_params(),
            optimizers: Vec::new(),
            meta: serde_json::Value::Null,
        }
    }

    pub fn optimizer(&self, name: &str) -> Option<&AdamState> {
        self.optimizers.iter().find(|(n, _)| n == name).map(|(_, s)| s)
    }
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct OptimizerEntry {
    name: String,
    step: u64,
    params: Vec<String>,
    first: Vec<usize>,
    second: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: u32,
    model: ModelConfig,
    seed: u64,
    epoch: usize,
    meta: serde_json::Value,
    params: Vec<Entry>,
    optimizers: Vec<OptimizerEntry>,
    payload_len: usize,
}

pub fn write_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let mut payload: Vec<f64> = Vec::new();
    let mut push = |v: &[f64]| {
        let off = payload.len();
        payload.extend_from_slice(v);
        off
    };
    let params = ckpt
        .params
        .iter()
        .map(|(name, t)| Entry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset: push(t.data()),
        })
        .collect();
    let optimizers = ckpt
        .optimizers
        .iter()
        .map(|(name, s)| OptimizerEntry {
            name: name.clone(),
            step: s.step,
            params: s.params.clone(),
            first: s.first.iter().map(|m| push(m)).collect(),
            second: s.second.iter().map(|v| push(v)).collect(),
        })
        .collect();
    let manifest = Manifest {
        format: FORMAT,
        model: ckpt.model.clone(),
        seed: ckpt.seed,
        epoch: ckpt.epoch,
        meta: ckpt.meta.clone(),
        params,
        optimizers,
        payload_len: payload.len(),
    };
    let json = serde_json::to_vec(&manifest).map_err(|e| Error::Format(format!("checkpoint manifest: {e}")))?;
    let mut out = Vec::with_capacity(16 + json.len() + 8 * payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for v in payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let mlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let json = bytes
        .get(16..16usize.saturating_add(mlen))
        .ok_or_else(|| Error::Format("checkpoint manifest truncated".into()))?;
    let manifest: Manifest =
        serde_json::from_slice(json).map_err(|e| Error::Format(format!("checkpoint manifest: {e}")))?;
    if manifest.format != FORMAT {
        return Err(Error::Format(format!("unsupported checkpoint format {}", manifest.format)));
    }
    let body = &bytes[16 + mlen..];
    if body.len() != manifest.payload_len * 8 {
        return Err(Error::Format(format!(
            "checkpoint payload has {} bytes, manifest expects {}",
            body.len(),
            manifest.payload_len * 8
        )));
    }
    let payload: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let slice = |off: usize, len: usize| -> Result<Vec<f64>> {
        payload
            .get(off..off.saturating_add(len))
            .map(<[f64]>::to_vec)
            .ok_or_else(|| Error::Format(format!("checkpoint slice {off}+{len} out of range")))
    };
    let params = manifest
        .params
        .iter()
        .map(|e| {
            let len = e.shape.iter().product();
            Ok((e.name.clone(), Tensor::new(e.shape.clone(), slice(e.offset, len)?)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let sizes: std::collections::HashMap<&str, usize> =
        params.iter().map(|(n, t)| (n.as_str(), t.numel())).collect();
    let optimizers = manifest
        .optimizers
        .iter()
        .map(|o| {
            let len_of = |name: &String| {
                sizes
                    .get(name.as_str())
                    .copied()
                    .ok_or_else(|| Error::Format(format!("optimizer state for unknown parameter {name}")))
            };
            let mut first = Vec::new();
            let mut second = Vec::new();
            if o.first.len() != o.params.len() || o.second.len() != o.params.len() {
                return Err(Error::Format(format!("optimizer {} has ragged state", o.name)));
            }
            for (i, name) in o.params.iter().enumerate() {
                let n = len_of(name)?;
                first.push(slice(o.first[i], n)?);
                second.push(slice(o.second[i], n)?);
            }
            Ok((
                o.name.clone(),
                AdamState {
                    step: o.step,
                    params: o.params.clone(),
                    first,
                    second,
                },
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Checkpoint {
        model: manifest.model,
        seed: manifest.seed,
        epoch: manifest.epoch,
        params,
        optimizers,
        meta: manifest.meta,
    })
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    fs::write(path, write_checkpoint(ckpt)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    read_checkpoint(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
