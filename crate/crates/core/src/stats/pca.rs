use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Top-two principal axes of a sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// `d × 2`, one unit component per column.
    pub components: Matrix,
    pub projected: Matrix,
    /// Eigenvalues of the sample covariance for the two components.
    pub explained_variance: [f64; 2],
}

impl Pca {
    /// Projects rows of `x` with the fitted mean and components.
    pub fn transform(&self, x: &Matrix) -> Result<Matrix> {
        let d = self.mean.len();
        if x.cols() != d {
            return Err(Error::Dimension {
                op: "pca transform",
                left: vec![x.rows(), x.cols()],
                right: vec![d],
            });
        }
        let mut out = Matrix::zeros(x.rows(), 2);
        for r in 0..x.rows() {
            let row = x.row(r);
            for c in 0..2 {
                out.set(
                    r,
                    c,
                    (0..d).map(|j| (row[j] - self.mean[j]) * self.components.get(j, c)).sum(),
                );
            }
        }
        Ok(out)
    }
}

/// Eigen-decomposition of the `n − 1` sample covariance of the centered rows.
/// Each component is signed so that its largest-magnitude entry is positive.
pub fn pca_top2(features: &Matrix) -> Result<Pca> {
    let (n, d) = (features.rows(), features.cols());
    if n < 2 {
        return Err(Error::contract(format!("pca needs at least 2 rows, got {n}")));
    }
    if d == 0 {
        return Err(Error::Degenerate("pca over zero columns".into()));
    }
    let mut mean = vec![0.0; d];
    for r in 0..n {
        for (m, v) in mean.iter_mut().zip(features.row(r)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = vec![0.0; d * d];
    let mut centered = vec![0.0; d];
    for r in 0..n {
        for (c, (v, m)) in centered.iter_mut().zip(features.row(r).iter().zip(&mean)) {
            *c = v - m;
        }
        for i in 0..d {
            let ci = centered[i];
            if ci == 0.0 {
                continue;
            }
            let row = &mut cov[i * d..(i + 1) * d];
            for j in i..d {
                row[j] += ci * centered[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov[i * d + j] / (n - 1) as f64;
            cov[i * d + j] = v;
            cov[j * d + i] = v;
        }
    }
    let total: f64 = (0..d).map(|i| cov[i * d + i]).sum();
    if total <= 0.0 || !total.is_finite() {
        return Err(Error::Degenerate("pca over zero-variance data".into()));
    }
    let eig = SymmetricEigen::new(DMatrix::from_row_slice(d, d, &cov));
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut components = Matrix::zeros(d, 2);
    let mut explained_variance = [0.0; 2];
    for (c, &k) in order.iter().take(2).enumerate() {
        let v = eig.eigenvectors.column(k);
        let lead = (0..d)
            .max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs()).then(b.cmp(&a)))
            .expect("d > 0");
        let sign = if v[lead] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..d {
            components.set(j, c, sign * v[j]);
        }
        explained_variance[c] = eig.eigenvalues[k].max(0.0);
    }
    let mut pca = Pca {
        mean,
        components,
        projected: Matrix::zeros(0, 2),
        explained_variance,
    };
    pca.projected = pca.transform(features)?;
    Ok(pca)
}
