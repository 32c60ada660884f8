use super::check_alpha;
use crate::error::{Error, Result};
use crate::graph::GraphSnapshot;
use crate::matrix::Matrix;

/// Iteration stops once the L1 mass of the next series term drops below this.
const TERM_TOL: f64 = 1e-15;
const MAX_TERMS: usize = 100_000;

/// Sparse row-stochastic `Ā = D⁻¹A`, stored by row and by column.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedAdjacency {
    /// `out[i]` holds `(j, Ā(i,j))` for every nonzero in row `i`, by ascending `j`.
    out: Vec<Vec<(usize, f64)>>,
    /// `inn[j]` holds `(i, Ā(i,j))` for every nonzero in column `j`.
    inn: Vec<Vec<(usize, f64)>>,
}

impl NormalizedAdjacency {
    pub fn n(&self) -> usize {
        self.out.len()
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.out[i]
    }

    pub fn to_dense(&self) -> Matrix {
        let n = self.n();
        let mut m = Matrix::zeros(n, n);
        for (i, row) in self.out.iter().enumerate() {
            for &(j, w) in row {
                m.set(i, j, w);
            }
        }
        m
    }
}

/// Repeated edges count once; nodes without out-edges get a self-loop.
pub fn normalize_adjacency(snapshot: &GraphSnapshot) -> Result<NormalizedAdjacency> {
    let n = snapshot.num_nodes();
    if n == 0 {
        return Err(Error::contract(format!("timestep {} has no nodes", snapshot.timestep)));
    }
    let mut targets: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(a, b) in &snapshot.edges {
        targets[a].push(b);
    }
    let mut out = Vec::with_capacity(n);
    let mut inn: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (i, t) in targets.iter_mut().enumerate() {
        t.sort_unstable();
        t.dedup();
        if t.is_empty() {
            t.push(i);
        }
        let w = 1.0 / t.len() as f64;
        for &j in t.iter() {
            inn[j].push((i, w));
        }
        out.push(t.iter().map(|&j| (j, w)).collect());
    }
    Ok(NormalizedAdjacency { out, inn })
}

/// The intimacy scores of one snapshot.
#[derive(Clone, Debug, PartialEq)]
pub struct IntimacyMatrix {
    pub alpha: f64,
    pub scores: Matrix,
}

impl IntimacyMatrix {
    pub fn n(&self) -> usize {
        self.scores.rows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.scores.get(i, j)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.scores.row(i)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.scores.column(j)
    }
}

/// `S = α·(I − (1−α)Ā)⁻¹`, assembled row by row.
pub fn intimacy(snapshot: &GraphSnapshot, alpha: f64) -> Result<IntimacyMatrix> {
    check_alpha(alpha)?;
    let adj = normalize_adjacency(snapshot)?;
    let n = adj.n();
    let mut data = Vec::with_capacity(n * n);
    for i in 0..n {
        data.extend(intimacy_row(&adj, alpha, i));
    }
    Ok(IntimacyMatrix {
        alpha,
        scores: Matrix::new(n, n, data)?,
    })
}

/// Row `S(i, ·) = α·e_iᵀ·Σ_t ((1−α)Ā)^t`.
///
/// Only nodes reachable from `i` are ever touched, so unreachable entries
/// are exactly zero. `alpha` must lie in `(0, 1]`.
pub fn intimacy_row(adj: &NormalizedAdjacency, alpha: f64, i: usize) -> Vec<f64> {
    neumann(&adj.out, alpha, i)
}

/// Column `S(·, j) = α·Σ_t ((1−α)Ā)^t·e_j`.
pub fn intimacy_column(adj: &NormalizedAdjacency, alpha: f64, j: usize) -> Vec<f64> {
    neumann(&adj.inn, alpha, j)
}

/// Sums the series `α·Σ_t (1−α)^t·e_sᵀ·P^t`, where `links[u]` lists the
/// `(v, P(u,v))` nonzeros of `P`.
fn neumann(links: &[Vec<(usize, f64)>], alpha: f64, source: usize) -> Vec<f64> {
    let n = links.len();
    let decay = 1.0 - alpha;
    let mut total = vec![0.0; n];
    let mut cur = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut seen = vec![false; n];
    let mut active = vec![source];
    let mut upcoming = Vec::new();
    cur[source] = alpha;
    for _ in 0..MAX_TERMS {
        let mut mass = 0.0;
        for &u in &active {
            total[u] += cur[u];
            mass += cur[u].abs();
        }
        if mass < TERM_TOL || decay == 0.0 {
            break;
        }
        for &u in &active {
            let m = decay * cur[u];
            cur[u] = 0.0;
            for &(v, w) in &links[u] {
                if !seen[v] {
                    seen[v] = true;
                    upcoming.push(v);
                }
                next[v] += m * w;
            }
        }
        for &v in &upcoming {
            seen[v] = false;
        }
        std::mem::swap(&mut cur, &mut next);
        std::mem::swap(&mut active, &mut upcoming);
        upcoming.clear();
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Label;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn snapshot(n: usize, edges: &[(usize, usize)]) -> GraphSnapshot {
        GraphSnapshot::new(
            1,
            (0..n).map(|i| i.to_string()).collect(),
            Matrix::zeros(n, 1),
            vec![Label::Unknown; n],
            edges.to_vec(),
        )
        .unwrap()
    }

    fn random_graph(rng: &mut ChaCha8Rng, n: usize, p: f64) -> Vec<(usize, usize)> {
        let mut e = Vec::new();
        for a in 0..n {
            for b in 0..n {
                if a != b && rng.random::<f64>() < p {
                    e.push((a, b));
                }
            }
        }
        e
    }

    /// Gauss-Jordan with partial pivoting on the dense Ā built straight from
    /// the edge list.
    fn dense_oracle(n: usize, edges: &[(usize, usize)], alpha: f64) -> Vec<Vec<f64>> {
        let mut a = vec![vec![0.0; n]; n];
        for &(i, j) in edges {
            a[i][j] = 1.0;
        }
        for (i, row) in a.iter_mut().enumerate() {
            let d: f64 = row.iter().sum();
            if d == 0.0 {
                row[i] = 1.0;
            } else {
                row.iter_mut().for_each(|v| *v /= d);
            }
        }
        let mut m: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut r: Vec<f64> = (0..n)
                    .map(|j| f64::from(u8::from(i == j)) - (1.0 - alpha) * a[i][j])
                    .collect();
                r.extend((0..n).map(|j| f64::from(u8::from(i == j))));
                r
            })
            .collect();
        for c in 0..n {
            let p = (c..n).max_by(|&x, &y| m[x][c].abs().total_cmp(&m[y][c].abs())).unwrap();
            m.swap(c, p);
            let piv = m[c][c];
            m[c].iter_mut().for_each(|v| *v /= piv);
            for r in 0..n {
                if r != c {
                    let f = m[r][c];
                    if f != 0.0 {
                        let src = m[c].clone();
                        m[r].iter_mut().zip(&src).for_each(|(v, s)| *v -= f * s);
                    }
                }
            }
        }
        m.into_iter().map(|r| r[n..].iter().map(|v| alpha * v).collect()).collect()
    }

    fn assert_matches_oracle(n: usize, edges: &[(usize, usize)], alpha: f64) {
        let s = intimacy(&snapshot(n, edges), alpha).unwrap();
        let oracle = dense_oracle(n, edges, alpha);
        for i in 0..n {
            for j in 0..n {
                assert!(
                    (s.get(i, j) - oracle[i][j]).abs() < 1e-9,
                    "({i},{j}): {} vs {}",
                    s.get(i, j),
                    oracle[i][j]
                );
            }
        }
    }

    #[test]
    fn two_node_chain_normalization() {
        let a = normalize_adjacency(&snapshot(2, &[(0, 1)])).unwrap().to_dense();
        assert_eq!(a, Matrix::from_rows(&[vec![0.0, 1.0], vec![0.0, 1.0]]).unwrap());
        let a = normalize_adjacency(&snapshot(1, &[])).unwrap().to_dense();
        assert_eq!(a, Matrix::from_rows(&[vec![1.0]]).unwrap());
        let a = normalize_adjacency(&snapshot(3, &[(0, 2), (0, 1), (0, 1)])).unwrap().to_dense();
        assert_eq!(a.row(0), &[0.0, 0.5, 0.5]);
    }

    #[test]
    fn empty_snapshot_rejected() {
        assert!(normalize_adjacency(&snapshot(0, &[])).is_err());
    }

    #[test]
    fn alpha_bounds() {
        let s = snapshot(2, &[(0, 1)]);
        assert!(intimacy(&s, 0.0).is_err());
        assert!(intimacy(&s, 1.5).is_err());
        assert!(intimacy(&s, f64::NAN).is_err());
    }

    #[test]
    fn alpha_one_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let e = random_graph(&mut rng, 9, 0.3);
        let s = intimacy(&snapshot(9, &e), 1.0).unwrap();
        for i in 0..9 {
            for j in 0..9 {
                assert_eq!(s.get(i, j), f64::from(u8::from(i == j)));
            }
        }
    }

    #[test]
    fn three_cycle_matches_oracle() {
        assert_matches_oracle(3, &[(0, 1), (1, 2), (2, 0)], 0.15);
        // closed form for the cycle: S(0, j) = α(1−α)^j / (1 − (1−α)³)
        let s = intimacy(&snapshot(3, &[(0, 1), (1, 2), (2, 0)]), 0.15).unwrap();
        let q: f64 = 0.85;
        for j in 0..3 {
            let want = 0.15 * q.powi(j as i32) / (1.0 - q.powi(3));
            assert!((s.get(0, j) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn random_graphs_match_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..20 {
            let n = rng.random_range(1..=30);
            let p = rng.random_range(0.0..0.3);
            let alpha = rng.random_range(0.05..1.0);
            let e = random_graph(&mut rng, n, p);
            assert_matches_oracle(n, &e, alpha);
        }
    }

    #[test]
    fn directed_two_node_fixture() {
        let s = intimacy(&snapshot(2, &[(0, 1)]), 0.15).unwrap();
        // node 1 only reaches itself
        assert!(s.get(0, 1) > 0.0);
        assert_eq!(s.get(1, 0), 0.0);
        assert!((s.get(1, 1) - 1.0).abs() < 1e-12);
        assert!((s.get(0, 0) - 0.15).abs() < 1e-12);
        let sym = intimacy(&snapshot(2, &[(0, 1), (1, 0)]), 0.15).unwrap();
        assert_ne!(sym, s);
        assert_eq!(sym.get(0, 1), sym.get(1, 0));
    }

    #[test]
    fn column_slices_match_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let e = random_graph(&mut rng, 15, 0.2);
        let snap = snapshot(15, &e);
        let s = intimacy(&snap, 0.3).unwrap();
        let adj = normalize_adjacency(&snap).unwrap();
        for j in 0..15 {
            for (a, b) in intimacy_column(&adj, 0.3, j).iter().zip(s.column(j)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn rows_are_distributions(seed in 0u64..10_000, n in 1usize..40, alpha in 0.01f64..=1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let e = random_graph(&mut rng, n, 0.15);
            let s = intimacy(&snapshot(n, &e), alpha).unwrap();
            for i in 0..n {
                prop_assert!(s.row(i).iter().all(|&v| v >= 0.0));
                prop_assert!((s.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }
}
