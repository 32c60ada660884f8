//! Dynamic directed transaction graphs: one snapshot per timestep, with
//! node features, partial labels and directed edges that never cross
//! timesteps.

mod cache;
mod elliptic;
mod split;
mod standardize;
mod synthetic;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub use cache::{dataset_hash, load_cache, read_cache, save_cache, write_cache};
pub use elliptic::{
    load_elliptic, load_elliptic_dir, write_elliptic, ELLIPTIC_CLASSES, ELLIPTIC_EDGES, ELLIPTIC_FEATURES,
};
pub use split::{split, GraphView, SplitConfig, TimestepRange};
pub use standardize::Standardizer;
pub use synthetic::{generate_synthetic, Drift, SyntheticConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Illicit,
    Licit,
    Unknown,
}

impl Label {
    /// Class index used by the classifier (illicit = 0, licit = 1).
    pub fn class_index(self) -> Option<usize> {
        match self {
            Label::Illicit => Some(0),
            Label::Licit => Some(1),
            Label::Unknown => None,
        }
    }

    pub fn is_labeled(self) -> bool {
        self != Label::Unknown
    }

    /// Parses the classes-file value: "1" illicit, "2" licit, "unknown".
    pub fn from_code(s: &str) -> Option<Self> {
        match s {
            "1" => Some(Label::Illicit),
            "2" => Some(Label::Licit),
            "unknown" => Some(Label::Unknown),
            _ => None,
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            Label::Illicit => "1",
            Label::Licit => "2",
            Label::Unknown => "unknown",
        }
    }
}

/// All nodes and edges of one timestep.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphSnapshot {
    pub timestep: usize,
    pub node_ids: Vec<String>,
    pub features: Matrix,
    pub labels: Vec<Label>,
    /// Directed `(src, dst)` pairs indexing into this snapshot.
    pub edges: Vec<(usize, usize)>,
}

impl GraphSnapshot {
    pub fn new(
        timestep: usize,
        node_ids: Vec<String>,
        features: Matrix,
        labels: Vec<Label>,
        edges: Vec<(usize, usize)>,
    ) -> Result<Self> {
        let s = Self {
            timestep,
            node_ids,
            features,
            labels,
            edges,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.node_ids.len();
        if self.labels.len() != n || self.features.rows() != n {
            return Err(Error::Invariant(format!(
                "timestep {}: {} ids, {} labels, {} feature rows",
                self.timestep,
                n,
                self.labels.len(),
                self.features.rows()
            )));
        }
        if let Some(&(a, b)) = self.edges.iter().find(|&&(a, b)| a >= n || b >= n) {
            return Err(Error::Invariant(format!(
                "timestep {}: edge ({a}, {b}) outside {n} nodes",
                self.timestep
            )));
        }
        Ok(())
    }

    pub fn num_nodes(&self) -> usize {
        self.node_ids.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn label_counts(&self) -> LabelCounts {
        let mut c = LabelCounts::default();
        for l in &self.labels {
            match l {
                Label::Illicit => c.illicit += 1,
                Label::Licit => c.licit += 1,
                Label::Unknown => c.unknown += 1,
            }
        }
        c
    }

    /// Number of weakly connected components.
    pub fn weak_components(&self) -> usize {
        let n = self.num_nodes();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for &(a, b) in &self.edges {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra != rb {
                parent[ra] = rb;
            }
        }
        (0..n).filter(|&i| find(&mut parent, i) == i).count()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub illicit: usize,
    pub licit: usize,
    pub unknown: usize,
}

/// Ordered snapshots for timesteps `1..=T`.
#[derive(Clone, Debug, PartialEq)]
pub struct TemporalGraph {
    snapshots: Vec<GraphSnapshot>,
    feature_dim: usize,
}

impl TemporalGraph {
    /// `snapshots[p - 1]` must hold timestep `p`.
    pub fn new(snapshots: Vec<GraphSnapshot>) -> Result<Self> {
        let feature_dim = snapshots.first().map_or(0, GraphSnapshot::feature_dim);
        for (i, s) in snapshots.iter().enumerate() {
            if s.timestep != i + 1 {
                return Err(Error::Invariant(format!(
                    "snapshot {i} carries timestep {}",
                    s.timestep
                )));
            }
            if s.feature_dim() != feature_dim {
                return Err(Error::Invariant(format!(
                    "timestep {} has {} features, expected {feature_dim}",
                    s.timestep,
                    s.feature_dim()
                )));
            }
            s.validate()?;
            if s.num_nodes() > 0 && s.weak_components() > 1 {
                log::warn!(
                    "timestep {} has {} weakly connected components",
                    s.timestep,
                    s.weak_components()
                );
            }
        }
        Ok(Self {
            snapshots,
            feature_dim,
        })
    }

    pub fn num_timesteps(&self) -> usize {
        self.snapshots.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn snapshots(&self) -> &[GraphSnapshot] {
        &self.snapshots
    }

    /// Snapshot for 1-based timestep `p`.
    pub fn snapshot(&self, p: usize) -> Option<&GraphSnapshot> {
        p.checked_sub(1).and_then(|i| self.snapshots.get(i))
    }

    pub fn num_nodes(&self) -> usize {
        self.snapshots.iter().map(GraphSnapshot::num_nodes).sum()
    }

    pub fn num_edges(&self) -> usize {
        self.snapshots.iter().map(|s| s.edges.len()).sum()
    }

    pub fn label_counts(&self) -> LabelCounts {
        self.snapshots.iter().fold(LabelCounts::default(), |mut acc, s| {
            let c = s.label_counts();
            acc.illicit += c.illicit;
            acc.licit += c.licit;
            acc.unknown += c.unknown;
            acc
        })
    }

    pub(crate) fn snapshots_mut(&mut self) -> &mut [GraphSnapshot] {
        &mut self.snapshots
    }
}
