use serde::{Deserialize, Serialize};

use super::{GraphView, TemporalGraph};
use crate::error::{Error, Result};

/// Per-feature z-score fitted on one view and applied to a whole graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Zero-variance features keep a unit scale (they are only centered).
    pub fn fit(view: &GraphView<'_>) -> Result<Self> {
        let d = view.graph().feature_dim();
        let mut count = 0usize;
        let mut sum = vec![0.0; d];
        for s in view.snapshots() {
            for i in 0..s.num_nodes() {
                for (acc, v) in sum.iter_mut().zip(s.features.row(i)) {
                    *acc += v;
                }
            }
            count += s.num_nodes();
        }
        if count < 2 {
            return Err(Error::contract("standardization needs at least 2 nodes"));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        let mut ss = vec![0.0; d];
        for s in view.snapshots() {
            for i in 0..s.num_nodes() {
                for ((acc, v), m) in ss.iter_mut().zip(s.features.row(i)).zip(&mean) {
                    *acc += (v - m) * (v - m);
                }
            }
        }
        let std = ss
            .iter()
            .map(|s| {
                let sd = (s / (count - 1) as f64).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, graph: &TemporalGraph) -> TemporalGraph {
        let mut out = graph.clone();
        for s in out.snapshots_mut() {
            for i in 0..s.features.rows() {
                for ((v, m), sd) in s.features.row_mut(i).iter_mut().zip(&self.mean).zip(&self.std) {
                    *v = (*v - m) / sd;
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate_synthetic, SyntheticConfig, TimestepRange};

    #[test]
    fn train_view_is_zero_mean_unit_variance() {
        let g = generate_synthetic(&SyntheticConfig::new(4, 25, 0.3, 3)).unwrap();
        let train = GraphView::new(&g, TimestepRange::new(1, 3).unwrap()).unwrap();
        let z = Standardizer::fit(&train).unwrap().apply(&g);
        let zt = GraphView::new(&z, TimestepRange::new(1, 3).unwrap()).unwrap();
        let again = Standardizer::fit(&zt).unwrap();
        for (m, s) in again.mean.iter().zip(&again.std) {
            assert!(m.abs() < 1e-12);
            assert!((s - 1.0).abs() < 1e-12);
        }
        // test timestep is transformed with train statistics, not refit
        assert_ne!(z.snapshot(4), g.snapshot(4));
    }
}
