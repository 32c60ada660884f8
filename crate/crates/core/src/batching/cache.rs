//! Binary batch cache. Layout: magic, version, key, then per timestep the
//! member slots of every batch as little-endian `i64` (`-1` for padding).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BatchingConfig, Ranking, SubgraphBatch, TimestepBatches};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"DYNBERGB";
const VERSION: u8 = 1;

/// Identifies a batching run; a cache is reused only on an exact match.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchCacheKey {
    pub dataset_hash: String,
    pub alpha: f64,
    pub k: usize,
    pub ranking: Ranking,
}

impl BatchCacheKey {
    pub fn new(dataset_hash: impl Into<String>, cfg: &BatchingConfig) -> Self {
        Self {
            dataset_hash: dataset_hash.into(),
            alpha: cfg.alpha,
            k: cfg.k,
            ranking: cfg.ranking,
        }
    }
}

fn encode(key: &BatchCacheKey, all: &[TimestepBatches]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(key.dataset_hash.len() as u32).to_le_bytes());
    out.extend_from_slice(key.dataset_hash.as_bytes());
    out.extend_from_slice(&key.alpha.to_le_bytes());
    out.extend_from_slice(&(key.k as u32).to_le_bytes());
    out.push(match key.ranking {
        Ranking::Row => 0,
        Ranking::Column => 1,
    });
    out.extend_from_slice(&(all.len() as u32).to_le_bytes());
    for t in all {
        out.extend_from_slice(&(t.timestep as u32).to_le_bytes());
        out.extend_from_slice(&(t.batches.len() as u64).to_le_bytes());
        for b in &t.batches {
            for m in &b.member_indices {
                out.extend_from_slice(&m.map_or(-1i64, |j| j as i64).to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let s = self
            .buf
            .get(self.pos..self.pos + N)
            .ok_or_else(|| Error::Format(format!("batch cache truncated at byte {}", self.pos)))?;
        self.pos += N;
        Ok(s.try_into().expect("length checked"))
    }

    fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self
            .buf
            .get(self.pos..self.pos.saturating_add(n))
            .ok_or_else(|| Error::Format(format!("batch cache truncated at byte {}", self.pos)))?;
        self.pos += n;
        Ok(s)
    }
}

fn decode(bytes: &[u8]) -> Result<(BatchCacheKey, Vec<TimestepBatches>)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.bytes(MAGIC.len())? != MAGIC {
        return Err(Error::Format("not a batch cache (bad magic)".into()));
    }
    let [version] = r.take::<1>()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported batch cache version {version}")));
    }
    let hlen = u32::from_le_bytes(r.take()?) as usize;
    let dataset_hash = std::str::from_utf8(r.bytes(hlen)?)
        .map_err(|e| Error::Format(format!("dataset hash is not UTF-8: {e}")))?
        .to_string();
    let alpha = f64::from_le_bytes(r.take()?);
    let k = u32::from_le_bytes(r.take()?) as usize;
    let ranking = match r.take::<1>()? {
        [0] => Ranking::Row,
        [1] => Ranking::Column,
        [x] => return Err(Error::Format(format!("bad ranking byte {x}"))),
    };
    let t = u32::from_le_bytes(r.take()?) as usize;
    let mut all = Vec::with_capacity(t);
    for _ in 0..t {
        let timestep = u32::from_le_bytes(r.take()?) as usize;
        let n = u64::from_le_bytes(r.take()?) as usize;
        let mut batches = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let mut members = Vec::with_capacity(k + 1);
            for _ in 0..=k {
                let v = i64::from_le_bytes(r.take()?);
                members.push(usize::try_from(v).ok());
            }
            let target = members[0].ok_or_else(|| Error::Format("batch with padded target slot".into()))?;
            let mask = members.iter().map(Option::is_some).collect();
            batches.push(SubgraphBatch {
                target_index: target,
                member_indices: members,
                mask,
            });
        }
        all.push(TimestepBatches { timestep, batches });
    }
    if r.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after batch cache".into()));
    }
    let key = BatchCacheKey {
        dataset_hash,
        alpha,
        k,
        ranking,
    };
    Ok((key, all))
}

pub fn save_batches(path: &Path, key: &BatchCacheKey, all: &[TimestepBatches]) -> Result<()> {
    fs::write(path, encode(key, all)).map_err(|e| Error::io(path, e))
}

/// `Ok(None)` when the file is missing or was written under a different key.
pub fn load_batches(path: &Path, key: &BatchCacheKey) -> Result<Option<Vec<TimestepBatches>>> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(Error::io(path, e)),
    };
    let (stored, all) = decode(&bytes)?;
    if &stored != key {
        log::info!("batch cache {} is stale, recomputing", path.display());
        return Ok(None);
    }
    Ok(Some(all))
}
