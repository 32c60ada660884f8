//! Directed intimacy scores and fixed-size top-k subgraphs.
//!
//! Each snapshot's adjacency is row-normalized (`Ā = D⁻¹A`, with a self-loop
//! on every node that has no out-edges) and the intimacy matrix is
//! `S = α·(I − (1−α)Ā)⁻¹`. Every target node then gets a subgraph made of
//! itself plus its `k` most intimate other nodes.

mod cache;
mod intimacy;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{GraphSnapshot, TemporalGraph};
use crate::matrix::Matrix;

pub use cache::{load_batches, save_batches, BatchCacheKey};
pub use intimacy::{intimacy, intimacy_column, intimacy_row, normalize_adjacency, IntimacyMatrix, NormalizedAdjacency};

/// Which slice of `S` ranks the context of target `i`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ranking {
    /// `S(i, ·)`: nodes the target's flow reaches.
    #[default]
    Row,
    /// `S(·, i)`: nodes whose flow reaches the target.
    Column,
}

impl std::str::FromStr for Ranking {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "row" => Ok(Ranking::Row),
            "column" => Ok(Ranking::Column),
            _ => Err(Error::contract(format!("ranking must be row or column, got {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchingConfig {
    pub k: usize,
    pub alpha: f64,
    pub ranking: Ranking,
}

impl Default for BatchingConfig {
    fn default() -> Self {
        Self {
            k: 11,
            alpha: 0.15,
            ranking: Ranking::Row,
        }
    }
}

impl BatchingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::contract("k must be >= 1"));
        }
        check_alpha(self.alpha)
    }
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::contract(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    Ok(())
}

/// The `(k+1)`-slot context of one target node.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubgraphBatch {
    pub target_index: usize,
    /// Target first, then context nodes by descending intimacy; `None`
    /// marks a padded slot.
    pub member_indices: Vec<Option<usize>>,
    pub mask: Vec<bool>,
}

impl SubgraphBatch {
    fn new(target: usize, context: &[usize], k: usize) -> Self {
        let mut member_indices = Vec::with_capacity(k + 1);
        member_indices.push(Some(target));
        member_indices.extend(context.iter().map(|&j| Some(j)));
        member_indices.resize(k + 1, None);
        let mask = member_indices.iter().map(Option::is_some).collect();
        Self {
            target_index: target,
            member_indices,
            mask,
        }
    }

    pub fn size(&self) -> usize {
        self.member_indices.len()
    }

    pub fn num_real(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// `(k+1) × d_x` raw features; padded rows are zero.
    pub fn features(&self, snapshot: &GraphSnapshot) -> Matrix {
        let d = snapshot.feature_dim();
        let mut out = Matrix::zeros(self.size(), d);
        for (r, m) in self.member_indices.iter().enumerate() {
            if let Some(j) = m {
                out.row_mut(r).copy_from_slice(snapshot.features.row(*j));
            }
        }
        out
    }
}

/// Scores are compared on a `1e-12` grid so that equal intimacies reached by
/// different summation orders still count as ties.
fn rank_key(score: f64) -> f64 {
    (score * 1e12).round()
}

/// Indices of the `k` highest-scoring nodes other than `target`, ties broken
/// by ascending index.
pub fn top_k(scores: &[f64], target: usize, k: usize) -> Vec<usize> {
    let keys: Vec<f64> = scores.iter().map(|&s| rank_key(s)).collect();
    let mut cand: Vec<usize> = (0..scores.len()).filter(|&j| j != target).collect();
    let cmp = |a: &usize, b: &usize| keys[*b].total_cmp(&keys[*a]).then(a.cmp(b));
    if cand.len() > k {
        cand.select_nth_unstable_by(k, cmp);
        cand.truncate(k);
    }
    cand.sort_by(cmp);
    cand
}

/// One batch per node, ranked from a materialized intimacy matrix.
pub fn build_subgraphs(
    snapshot: &GraphSnapshot,
    s: &IntimacyMatrix,
    k: usize,
    ranking: Ranking,
) -> Result<Vec<SubgraphBatch>> {
    if k == 0 {
        return Err(Error::contract("k must be >= 1"));
    }
    let n = snapshot.num_nodes();
    if s.n() != n {
        return Err(Error::Dimension {
            op: "build_subgraphs",
            left: vec![n],
            right: vec![s.n(), s.n()],
        });
    }
    Ok((0..n)
        .map(|i| {
            let scores = match ranking {
                Ranking::Row => s.row(i).to_vec(),
                Ranking::Column => s.column(i),
            };
            SubgraphBatch::new(i, &top_k(&scores, i, k), k)
        })
        .collect())
}

/// One batch per node, computing each target's intimacy slice on demand so
/// the full `|ν|²` matrix is never held.
pub fn batch_snapshot(snapshot: &GraphSnapshot, cfg: &BatchingConfig) -> Result<Vec<SubgraphBatch>> {
    cfg.validate()?;
    let adj = normalize_adjacency(snapshot)?;
    Ok((0..snapshot.num_nodes())
        .map(|i| {
            let scores = match cfg.ranking {
                Ranking::Row => intimacy_row(&adj, cfg.alpha, i),
                Ranking::Column => intimacy_column(&adj, cfg.alpha, i),
            };
            SubgraphBatch::new(i, &top_k(&scores, i, cfg.k), cfg.k)
        })
        .collect())
}

/// Batches of one timestep.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimestepBatches {
    pub timestep: usize,
    pub batches: Vec<SubgraphBatch>,
}

/// Batches every snapshot. Snapshots are processed on worker threads; the
/// result does not depend on scheduling.
pub fn batch_graph(graph: &TemporalGraph, cfg: &BatchingConfig) -> Result<Vec<TimestepBatches>> {
    cfg.validate()?;
    let snaps = graph.snapshots();
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(snaps.len().max(1));
    let chunk = snaps.len().div_ceil(workers.max(1)).max(1);
    let results: Vec<Result<Vec<TimestepBatches>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = snaps
            .chunks(chunk)
            .map(|part| {
                scope.spawn(move || {
                    part.iter()
                        .map(|s| {
                            Ok(TimestepBatches {
                                timestep: s.timestep,
                                batches: batch_snapshot(s, cfg)?,
                            })
                        })
                        .collect()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("batching worker panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(snaps.len());
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}
