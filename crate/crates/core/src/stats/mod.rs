//! Feature-level analyses of the temporal graph: principal components and
//! timestep clustering, autocorrelation, chi-square feature ranking,
//! two-sample KS tests and moment summaries around the market shutdown.

mod cluster;
mod hypothesis;
mod pca;
mod shutdown;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use cluster::{kmeans, timestep_mean_pca_clusters, KMeans, TimestepClusters};
pub use hypothesis::{chi2_rank, chi2_statistic, kolmogorov_sf, ks_two_sample, Chi2Ranking, KSResult};
pub use pca::{pca_top2, Pca};
pub use shutdown::{shutdown_analysis, Period, ShutdownOptions, ShutdownReport, SummaryGroup};

/// Correctly rounded sum (Shewchuk's partials), so that a sample and its
/// negation sum to exactly zero.
fn exact_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut partials: Vec<f64> = Vec::new();
    for mut x in values {
        let mut i = 0;
        for j in 0..partials.len() {
            let mut y = partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        partials.truncate(i);
        partials.push(x);
    }
    // round-half-even correction across the top partials
    let mut hi = 0.0;
    if let Some(mut n) = partials.len().checked_sub(1) {
        hi = partials[n];
        let mut lo = 0.0;
        while n > 0 {
            let x = hi;
            n -= 1;
            let y = partials[n];
            hi = x + y;
            lo = y - (hi - x);
            if lo != 0.0 {
                break;
            }
        }
        if n > 0 && ((lo < 0.0 && partials[n - 1] < 0.0) || (lo > 0.0 && partials[n - 1] > 0.0)) {
            let y = lo * 2.0;
            let x = hi + y;
            if y == x - hi {
                hi = x;
            }
        }
    }
    hi
}

/// Central moments of a sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Moments {
    pub n: usize,
    pub mean: f64,
    /// Second central moment, divided by `n`.
    pub m2: f64,
    pub m3: f64,
    pub m4: f64,
}

impl Moments {
    pub fn of(x: &[f64]) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::contract("moments of an empty sample"));
        }
        let n = x.len() as f64;
        let mean = exact_sum(x.iter().copied()) / n;
        let d: Vec<f64> = x.iter().map(|v| v - mean).collect();
        let moment = |k: i32| exact_sum(d.iter().map(|v| v.powi(k))) / n;
        Ok(Self {
            n: x.len(),
            mean,
            m2: moment(2),
            m3: moment(3),
            m4: moment(4),
        })
    }

    /// Sample standard deviation with the `n − 1` denominator.
    pub fn stdev(&self) -> f64 {
        if self.n < 2 {
            return f64::NAN;
        }
        (self.m2 * self.n as f64 / (self.n - 1) as f64).sqrt()
    }

    /// `g1 = m3 / m2^{3/2}`.
    pub fn skewness_biased(&self) -> f64 {
        self.m3 / self.m2.powf(1.5)
    }

    /// `g2 = m4 / m2² − 3`.
    pub fn excess_kurtosis_biased(&self) -> f64 {
        self.m4 / (self.m2 * self.m2) - 3.0
    }

    /// `G1 = g1 · √(n(n−1)) / (n−2)`; NaN below three samples.
    pub fn skewness(&self) -> f64 {
        let n = self.n as f64;
        if self.n < 3 {
            return f64::NAN;
        }
        self.skewness_biased() * (n * (n - 1.0)).sqrt() / (n - 2.0)
    }

    /// `G2 = ((n+1)·g2 + 6)·(n−1) / ((n−2)(n−3))`; NaN below four samples.
    pub fn excess_kurtosis(&self) -> f64 {
        let n = self.n as f64;
        if self.n < 4 {
            return f64::NAN;
        }
        ((n + 1.0) * self.excess_kurtosis_biased() + 6.0) * (n - 1.0) / ((n - 2.0) * (n - 3.0))
    }
}

/// Four-moment summary of one feature. Skewness and kurtosis are the
/// bias-adjusted estimators; kurtosis is excess (normal = 0).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSummary {
    pub feature_index: usize,
    pub n: usize,
    pub mean: f64,
    pub stdev: f64,
    pub skewness: f64,
    pub kurtosis: f64,
}

impl FeatureSummary {
    pub fn of(feature_index: usize, x: &[f64]) -> Result<Self> {
        let m = Moments::of(x)?;
        Ok(Self {
            feature_index,
            n: m.n,
            mean: m.mean,
            stdev: m.stdev(),
            skewness: m.skewness(),
            kurtosis: m.excess_kurtosis(),
        })
    }
}

/// Sample autocorrelation `r(h)` for `h = 0..=max_lag`.
pub fn acf(series: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    if max_lag >= series.len() {
        return Err(Error::contract(format!(
            "max_lag {max_lag} needs more than {} values",
            series.len()
        )));
    }
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let d: Vec<f64> = series.iter().map(|v| v - mean).collect();
    let denom: f64 = d.iter().map(|v| v * v).sum();
    if denom <= 0.0 || !denom.is_finite() {
        return Err(Error::Degenerate("autocorrelation of a constant series".into()));
    }
    Ok((0..=max_lag)
        .map(|h| {
            if h == 0 {
                return 1.0;
            }
            let num: f64 = d[..d.len() - h].iter().zip(&d[h..]).map(|(a, b)| a * b).sum();
            num / denom
        })
        .collect())
}
