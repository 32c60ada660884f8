//! Binary graph cache: magic, version byte, then one record per snapshot.
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{GraphSnapshot, Label, TemporalGraph};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

const MAGIC: &[u8; 8] = b"DYNBERGG";
const VERSION: u8 = 1;

pub fn write_cache(graph: &TemporalGraph) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(graph.feature_dim() as u32).to_le_bytes());
    out.extend_from_slice(&(graph.num_timesteps() as u32).to_le_bytes());
    for s in graph.snapshots() {
        out.extend_from_slice(&(s.timestep as u32).to_le_bytes());
        out.extend_from_slice(&(s.num_nodes() as u64).to_le_bytes());
        for (id, label) in s.node_ids.iter().zip(&s.labels) {
            out.extend_from_slice(&(id.len() as u32).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
            out.push(match label {
                Label::Illicit => 1,
                Label::Licit => 2,
                Label::Unknown => 0,
            });
        }
        for v in s.features.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(s.edges.len() as u64).to_le_bytes());
        for &(a, b) in &s.edges {
            out.extend_from_slice(&(a as u32).to_le_bytes());
            out.extend_from_slice(&(b as u32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn read_cache(bytes: &[u8]) -> Result<TemporalGraph> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Format("not a graph cache (bad magic)".into()));
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported graph cache version {version}")));
    }
    let d = r.u32()? as usize;
    let t = r.u32()? as usize;
    let mut snapshots = Vec::with_capacity(t);
    for _ in 0..t {
        let timestep = r.u32()? as usize;
        let n = r.u64()? as usize;
        let mut ids = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let len = r.u32()? as usize;
            let id = std::str::from_utf8(r.take(len)?)
                .map_err(|e| Error::Format(format!("node id is not UTF-8: {e}")))?;
            ids.push(id.to_string());
            labels.push(match r.u8()? {
                1 => Label::Illicit,
                2 => Label::Licit,
                0 => Label::Unknown,
                x => return Err(Error::Format(format!("bad label byte {x}"))),
            });
        }
        let feats = (0..n * d).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let m = r.u64()? as usize;
        let edges = (0..m)
            .map(|_| Ok((r.u32()? as usize, r.u32()? as usize)))
            .collect::<Result<Vec<_>>>()?;
        snapshots.push(GraphSnapshot::new(timestep, ids, Matrix::new(n, d, feats)?, labels, edges)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after graph cache".into()));
    }
    TemporalGraph::new(snapshots)
}

pub fn save_cache(graph: &TemporalGraph, path: &Path) -> Result<()> {
    fs::write(path, write_cache(graph)).map_err(|e| Error::io(path, e))
}

pub fn load_cache(path: &Path) -> Result<TemporalGraph> {
    read_cache(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Hex SHA-256 of the cache encoding; identifies a dataset for batch caches.
pub fn dataset_hash(graph: &TemporalGraph) -> String {
    let digest = Sha256::digest(write_cache(graph));
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
