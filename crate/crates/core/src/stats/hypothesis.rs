use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Label;
use crate::matrix::Matrix;

/// Features ordered by descending statistic, ties by ascending index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Chi2Ranking {
    pub entries: Vec<(usize, f64)>,
}

impl Chi2Ranking {
    pub fn top(&self, n: usize) -> &[(usize, f64)] {
        &self.entries[..n.min(self.entries.len())]
    }

    pub fn indices(&self, n: usize) -> Vec<usize> {
        self.top(n).iter().map(|e| e.0).collect()
    }
}

/// Pearson statistic `Σ (O − E)² / E` with expected counts from the
/// margins. Rows or columns with a zero margin contribute nothing.
pub fn chi2_statistic(table: &[Vec<f64>]) -> Result<f64> {
    let cols = table.first().map_or(0, Vec::len);
    if table.iter().any(|r| r.len() != cols) {
        return Err(Error::contract("ragged contingency table"));
    }
    let rows: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
    let colsum: Vec<f64> = (0..cols).map(|c| table.iter().map(|r| r[c]).sum()).collect();
    let total: f64 = rows.iter().sum();
    if total <= 0.0 {
        return Err(Error::Degenerate("empty contingency table".into()));
    }
    let mut chi = 0.0;
    for (r, row) in table.iter().enumerate() {
        for (c, &o) in row.iter().enumerate() {
            let e = rows[r] * colsum[c] / total;
            if e > 0.0 {
                chi += (o - e) * (o - e) / e;
            }
        }
    }
    Ok(chi)
}

/// Ranks every column by the chi-square statistic of its bucket × class
/// table. Each column is min-max scaled to `[0, 1]` over the labeled rows
/// and cut into `bins` equal-width buckets (the top edge joins the last).
pub fn chi2_rank(features: &Matrix, labels: &[Label], bins: usize) -> Result<Chi2Ranking> {
    if bins < 2 {
        return Err(Error::contract(format!("chi-square needs bins >= 2, got {bins}")));
    }
    if labels.len() != features.rows() {
        return Err(Error::Dimension {
            op: "chi2_rank",
            left: vec![features.rows(), features.cols()],
            right: vec![labels.len()],
        });
    }
    let rows: Vec<(usize, usize)> = labels
        .iter()
        .enumerate()
        .filter_map(|(r, l)| l.class_index().map(|c| (r, c)))
        .collect();
    let mut present = [false; 2];
    rows.iter().for_each(|&(_, c)| present[c] = true);
    if !(present[0] && present[1]) {
        return Err(Error::contract("chi-square ranking needs both classes"));
    }
    let mut entries = Vec::with_capacity(features.cols());
    for f in 0..features.cols() {
        let (lo, hi) = rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(r, _)| {
            let v = features.get(r, f);
            (lo.min(v), hi.max(v))
        });
        let mut table = vec![vec![0.0; 2]; bins];
        for &(r, c) in &rows {
            let b = if hi > lo {
                let u = (features.get(r, f) - lo) / (hi - lo);
                ((u * bins as f64) as usize).min(bins - 1)
            } else {
                0
            };
            table[b][c] += 1.0;
        }
        entries.push((f, chi2_statistic(&table)?));
    }
    entries.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(Chi2Ranking { entries })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KSResult {
    pub d_statistic: f64,
    pub p_value: f64,
    pub n1: usize,
    pub n2: usize,
}

const SERIES_TOL: f64 = 1e-12;

/// Survival function of the Kolmogorov distribution, `P(K > λ)`.
///
/// Uses `2 Σ (−1)^{k−1} e^{−2k²λ²}` for `λ ≥ 1`, and the complement of
/// `√(2π)/λ Σ e^{−(2k−1)²π²/(8λ²)}` below, where that form converges fast.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda >= 1.0 {
        let mut sum = 0.0;
        for k in 1..=100 {
            let kf = k as f64;
            let term = (-2.0 * kf * kf * lambda * lambda).exp();
            sum += if k % 2 == 1 { term } else { -term };
            if term < SERIES_TOL * sum.abs() || term == 0.0 {
                break;
            }
        }
        (2.0 * sum).clamp(0.0, 1.0)
    } else {
        let mut sum = 0.0;
        for k in 1..=100 {
            let j = (2 * k - 1) as f64;
            let term = (-j * j * PI * PI / (8.0 * lambda * lambda)).exp();
            sum += term;
            if term <= SERIES_TOL * sum || term == 0.0 {
                break;
            }
        }
        (1.0 - (2.0 * PI).sqrt() / lambda * sum).clamp(0.0, 1.0)
    }
}

/// Two-sample Kolmogorov-Smirnov test with the asymptotic p-value at
/// effective size `n1·n2/(n1+n2)`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KSResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::contract("ks test on an empty sample"));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::Numeric("ks test on NaN values".into()));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n1, n2) = (a.len(), b.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n1 && j < n2 {
        let v = a[i].min(b[j]);
        while i < n1 && a[i] <= v {
            i += 1;
        }
        while j < n2 && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n1 as f64 - j as f64 / n2 as f64).abs());
    }
    let en = (n1 * n2) as f64 / (n1 + n2) as f64;
    Ok(KSResult {
        d_statistic: d,
        p_value: kolmogorov_sf(en.sqrt() * d),
        n1,
        n2,
    })
}
