use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::pca_top2;
use crate::error::{Error, Result};
use crate::graph::TemporalGraph;
use crate::matrix::Matrix;

const MAX_LLOYD_ITERS: usize = 300;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KMeans {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub inertia: f64,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, m) in centroids.iter().enumerate() {
        let d = dist2(p, m);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d: Vec<f64> = points.iter().map(|p| dist2(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = points.len() - 1;
            for (i, &w) in d.iter().enumerate() {
                if u < w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            pick
        } else {
            rng.random_range(0..points.len())
        };
        centroids.push(points[pick].clone());
        for (di, p) in d.iter_mut().zip(points) {
            *di = di.min(dist2(p, centroids.last().expect("pushed")));
        }
    }
    centroids
}

fn lloyd(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>) -> KMeans {
    let dim = points[0].len();
    let mut assignments = vec![usize::MAX; points.len()];
    for _ in 0..MAX_LLOYD_ITERS {
        let mut changed = false;
        for (a, p) in assignments.iter_mut().zip(points) {
            let (c, _) = nearest(p, &centroids);
            changed |= *a != c;
            *a = c;
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; centroids.len()];
        let mut counts = vec![0usize; centroids.len()];
        for (&a, p) in assignments.iter().zip(points) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        for (c, (s, &n)) in sums.into_iter().zip(&counts).enumerate() {
            // an emptied cluster keeps its previous centroid
            if n > 0 {
                centroids[c] = s.into_iter().map(|v| v / n as f64).collect();
            }
        }
    }
    let inertia = points
        .iter()
        .zip(&assignments)
        .map(|(p, &a)| dist2(p, &centroids[a]))
        .sum();
    KMeans {
        centroids,
        assignments,
        inertia,
    }
}

/// k-means with k-means++ seeding; the restart with the lowest inertia wins
/// (earliest on ties).
pub fn kmeans(points: &[Vec<f64>], k: usize, restarts: usize, seed: u64) -> Result<KMeans> {
    if k == 0 || restarts == 0 {
        return Err(Error::contract("kmeans needs k >= 1 and restarts >= 1"));
    }
    if k > points.len() {
        return Err(Error::contract(format!("{k} clusters for {} points", points.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeans> = None;
    for _ in 0..restarts {
        let run = lloyd(points, plus_plus(points, k, &mut rng));
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("restarts >= 1"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimestepClusters {
    /// Per-timestep mean of the two projected components, in timestep order.
    pub means: Vec<[f64; 2]>,
    pub assignments: Vec<usize>,
    pub inertia: f64,
    pub explained_variance: [f64; 2],
}

pub const CLUSTER_RESTARTS: usize = 100;
pub const CLUSTER_SEED: u64 = 0;

/// Projects every node onto the top-2 principal components of all nodes,
/// averages per timestep and clusters the means.
pub fn timestep_mean_pca_clusters(graph: &TemporalGraph, n_clusters: usize, skip_timestep: bool) -> Result<TimestepClusters> {
    let t = graph.num_timesteps();
    if n_clusters == 0 || n_clusters > t {
        return Err(Error::contract(format!("{n_clusters} clusters for {t} timesteps")));
    }
    let first = usize::from(skip_timestep);
    let d = graph.feature_dim().saturating_sub(first);
    let mut data = Vec::with_capacity(graph.num_nodes() * d);
    for s in graph.snapshots() {
        for r in 0..s.num_nodes() {
            data.extend_from_slice(&s.features.row(r)[first..]);
        }
    }
    let features = Matrix::new(graph.num_nodes(), d, data)?;
    let pca = pca_top2(&features)?;
    let mut means = Vec::with_capacity(t);
    let mut row = 0;
    for s in graph.snapshots() {
        let n = s.num_nodes();
        let mut m = [0.0; 2];
        for r in row..row + n {
            m[0] += pca.projected.get(r, 0);
            m[1] += pca.projected.get(r, 1);
        }
        means.push([m[0] / n as f64, m[1] / n as f64]);
        row += n;
    }
    let pts: Vec<Vec<f64>> = means.iter().map(|m| m.to_vec()).collect();
    let km = kmeans(&pts, n_clusters, CLUSTER_RESTARTS, CLUSTER_SEED)?;
    Ok(TimestepClusters {
        means,
        assignments: km.assignments,
        inertia: km.inertia,
        explained_variance: pca.explained_variance,
    })
}
