use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{GraphSnapshot, Label, TemporalGraph};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Feature-mean drift applied from `from_timestep` onward.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Drift {
    pub from_timestep: usize,
    pub shift: f64,
}

/// Parameters of the synthetic dynamic graph.
///
/// Nodes are grouped into communities that share a feature centroid and
/// link mostly among themselves. Whole communities are illicit, and
/// illicit centroids are offset by `class_shift` on the first
/// `informative_dims` non-timestep features, so the classes are separable
/// both from raw features and from subgraph context.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub timesteps: usize,
    pub nodes_per_step: usize,
    pub illicit_frac: f64,
    pub seed: u64,
    /// Total feature columns, including the timestep column when enabled.
    pub feature_dim: usize,
    pub informative_dims: usize,
    pub class_shift: f64,
    /// 0 disables communities: every node draws its features independently.
    pub community_size: usize,
    pub community_spread: f64,
    pub noise: f64,
    /// Probability that an edge stays inside the source node's community.
    pub homophily: f64,
    pub min_out_degree: usize,
    pub max_out_degree: usize,
    pub label_frac: f64,
    /// Put the timestep in feature column 0, as the Elliptic layout does.
    /// Off by default: the column is constant within a timestep, so test
    /// timesteps fall outside its training range.
    pub timestep_feature: bool,
    pub drift: Option<Drift>,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            timesteps: 4,
            nodes_per_step: 40,
            illicit_frac: 0.3,
            seed: 0,
            feature_dim: 12,
            informative_dims: 6,
            class_shift: 2.0,
            community_size: 6,
            community_spread: 1.0,
            noise: 0.3,
            homophily: 0.95,
            min_out_degree: 1,
            max_out_degree: 3,
            label_frac: 0.6,
            timestep_feature: false,
            drift: None,
        }
    }
}

impl SyntheticConfig {
    pub fn new(timesteps: usize, nodes_per_step: usize, illicit_frac: f64, seed: u64) -> Self {
        Self {
            timesteps,
            nodes_per_step,
            illicit_frac,
            seed,
            ..Default::default()
        }
    }

    /// Shorthand for tests: defaults with the four headline parameters.
    pub fn small(timesteps: usize, nodes_per_step: usize, illicit_frac: f64, seed: u64) -> Self {
        Self::new(timesteps, nodes_per_step, illicit_frac, seed)
    }

    fn validate(&self) -> Result<()> {
        let offset = usize::from(self.timestep_feature);
        let checks = [
            (self.timesteps >= 1, "timesteps must be >= 1"),
            (self.nodes_per_step >= 2, "nodes_per_step must be >= 2"),
            ((0.0..=1.0).contains(&self.illicit_frac), "illicit_frac must lie in [0, 1]"),
            (self.label_frac > 0.0 && self.label_frac <= 1.0, "label_frac must lie in (0, 1]"),
            ((0.0..=1.0).contains(&self.homophily), "homophily must lie in [0, 1]"),
            (self.feature_dim > offset, "feature_dim leaves no room for features"),
            (
                self.informative_dims + offset <= self.feature_dim,
                "informative_dims exceeds feature_dim",
            ),
            (
                self.min_out_degree <= self.max_out_degree,
                "min_out_degree exceeds max_out_degree",
            ),
            (self.noise >= 0.0 && self.community_spread >= 0.0, "negative spread"),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(Error::contract(msg));
            }
        }
        Ok(())
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample::<f64, _>(StandardNormal)
}

/// Deterministic under `cfg.seed`.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<TemporalGraph> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.nodes_per_step;
    let offset = usize::from(cfg.timestep_feature);
    let body = cfg.feature_dim - offset;
    let mut snapshots = Vec::with_capacity(cfg.timesteps);

    for p in 1..=cfg.timesteps {
        // community membership and class
        let (community, n_comm, comm_illicit): (Vec<usize>, usize, Vec<bool>) = if cfg.community_size > 0 {
            let c = n.div_ceil(cfg.community_size).max(1);
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let mut community = vec![0; n];
            for (slot, &node) in order.iter().enumerate() {
                community[node] = slot * c / n;
            }
            let n_illicit = (c as f64 * cfg.illicit_frac).round() as usize;
            let mut comms: Vec<usize> = (0..c).collect();
            comms.shuffle(&mut rng);
            let mut illicit = vec![false; c];
            for &k in comms.iter().take(n_illicit) {
                illicit[k] = true;
            }
            (community, c, illicit)
        } else {
            let classes: Vec<usize> = (0..n)
                .map(|_| usize::from(rng.random::<f64>() < cfg.illicit_frac))
                .collect();
            // community 1 is the illicit group
            (classes, 2, vec![false, true])
        };

        let shift_all = cfg
            .drift
            .filter(|d| p >= d.from_timestep)
            .map_or(0.0, |d| d.shift);
        let centroids: Vec<Vec<f64>> = (0..n_comm)
            .map(|k| {
                (0..body)
                    .map(|j| {
                        let base = if cfg.community_size > 0 {
                            cfg.community_spread * normal(&mut rng)
                        } else {
                            0.0
                        };
                        let class = if comm_illicit[k] && j < cfg.informative_dims {
                            cfg.class_shift
                        } else {
                            0.0
                        };
                        base + class + shift_all
                    })
                    .collect()
            })
            .collect();
        let noise = if cfg.community_size > 0 { cfg.noise } else { cfg.noise.max(1.0) };

        let mut features = Matrix::zeros(n, cfg.feature_dim);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let row = features.row_mut(i);
            if cfg.timestep_feature {
                row[0] = p as f64;
            }
            for j in 0..body {
                row[offset + j] = centroids[community[i]][j] + noise * normal(&mut rng);
            }
            let illicit = comm_illicit[community[i]];
            let label = if rng.random::<f64>() < cfg.label_frac {
                if illicit {
                    Label::Illicit
                } else {
                    Label::Licit
                }
            } else {
                Label::Unknown
            };
            labels.push(label);
        }

        let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_comm];
        for (i, &c) in community.iter().enumerate() {
            members[c].push(i);
        }
        let mut edges = Vec::new();
        for i in 0..n {
            let degree = rng.random_range(cfg.min_out_degree..=cfg.max_out_degree);
            let mut targets: Vec<usize> = Vec::with_capacity(degree);
            for _ in 0..degree {
                let peers = &members[community[i]];
                let j = if peers.len() > 1 && rng.random::<f64>() < cfg.homophily {
                    peers[rng.random_range(0..peers.len())]
                } else {
                    rng.random_range(0..n)
                };
                if j != i && !targets.contains(&j) {
                    targets.push(j);
                }
            }
            edges.extend(targets.into_iter().map(|j| (i, j)));
        }

        let ids = (0..n).map(|i| format!("t{p}n{i}")).collect();
        snapshots.push(GraphSnapshot::new(p, ids, features, labels, edges)?);
    }
    TemporalGraph::new(snapshots)
}
