use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{chi2_rank, ks_two_sample, FeatureSummary, KSResult};
use crate::error::{Error, Result};
use crate::graph::{Label, TemporalGraph};
use crate::matrix::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Period {
    Before,
    After,
}

impl Period {
    fn name(self) -> &'static str {
        match self {
            Period::Before => "before",
            Period::After => "after",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShutdownOptions {
    /// First timestep of the "after" period.
    pub boundary: usize,
    pub top: usize,
    pub bins: usize,
    /// Leave feature column 0 (the timestep) out of the ranking.
    pub skip_timestep: bool,
}

impl Default for ShutdownOptions {
    fn default() -> Self {
        Self {
            boundary: 43,
            top: 10,
            bins: 10,
            skip_timestep: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryGroup {
    pub label: Label,
    pub period: Period,
    pub rows: Vec<FeatureSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShutdownReport {
    pub options: ShutdownOptions,
    /// Top features before and after with their statistics.
    pub top_before: Vec<(usize, f64)>,
    pub top_after: Vec<(usize, f64)>,
    /// Features in both top lists, in "before" rank order.
    pub common: Vec<usize>,
    /// Illicit before, illicit after, licit before, licit after.
    pub summaries: Vec<SummaryGroup>,
    /// Per common feature: (feature, licit before vs after, illicit before vs after).
    pub ks: Vec<(usize, KSResult, KSResult)>,
}

/// Feature columns are reported 1-based, matching the `f1..` naming of the
/// feature file.
fn col_name(idx: usize) -> String {
    format!("f{}", idx + 1)
}

struct Side {
    features: Matrix,
    labels: Vec<Label>,
}

impl Side {
    fn gather(graph: &TemporalGraph, steps: impl Iterator<Item = usize>) -> Result<Self> {
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for p in steps {
            let s = graph.snapshot(p).expect("timestep in range");
            for (r, &l) in s.labels.iter().enumerate() {
                if l.is_labeled() {
                    data.extend_from_slice(s.features.row(r));
                    labels.push(l);
                }
            }
        }
        Ok(Self {
            features: Matrix::new(labels.len(), graph.feature_dim(), data)?,
            labels,
        })
    }

    fn column(&self, f: usize, label: Label) -> Vec<f64> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == label)
            .map(|(r, _)| self.features.get(r, f))
            .collect()
    }
}

/// Chi-square top features of the labeled nodes before and after the
/// boundary, then moment summaries and before/after KS tests per class on
/// the features common to both lists.
pub fn shutdown_analysis(graph: &TemporalGraph, opts: &ShutdownOptions) -> Result<ShutdownReport> {
    let t = graph.num_timesteps();
    if opts.boundary < 2 || opts.boundary > t {
        return Err(Error::contract(format!(
            "boundary {} leaves an empty period in 1..{t}",
            opts.boundary
        )));
    }
    let before = Side::gather(graph, 1..opts.boundary)?;
    let after = Side::gather(graph, opts.boundary..=t)?;
    for (side, name) in [(&before, "before"), (&after, "after")] {
        if side.labels.is_empty() {
            return Err(Error::contract(format!("no labeled nodes {name} the boundary")));
        }
    }
    let first = usize::from(opts.skip_timestep);
    let top = |side: &Side| -> Result<Vec<(usize, f64)>> {
        Ok(chi2_rank(&side.features, &side.labels, opts.bins)?
            .entries
            .into_iter()
            .filter(|e| e.0 >= first)
            .take(opts.top)
            .collect())
    };
    let top_before = top(&before)?;
    let top_after = top(&after)?;
    let common: Vec<usize> = top_before
        .iter()
        .map(|e| e.0)
        .filter(|f| top_after.iter().any(|a| a.0 == *f))
        .collect();

    let mut summaries = Vec::new();
    for label in [Label::Illicit, Label::Licit] {
        for (period, side) in [(Period::Before, &before), (Period::After, &after)] {
            let rows = common
                .iter()
                .map(|&f| FeatureSummary::of(f, &side.column(f, label)))
                .collect::<Result<Vec<_>>>()?;
            summaries.push(SummaryGroup { label, period, rows });
        }
    }
    let ks = common
        .iter()
        .map(|&f| {
            let licit = ks_two_sample(&before.column(f, Label::Licit), &after.column(f, Label::Licit))?;
            let illicit = ks_two_sample(&before.column(f, Label::Illicit), &after.column(f, Label::Illicit))?;
            Ok((f, licit, illicit))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ShutdownReport {
        options: opts.clone(),
        top_before,
        top_after,
        common,
        summaries,
        ks,
    })
}

fn label_name(l: Label) -> &'static str {
    match l {
        Label::Illicit => "illicit",
        Label::Licit => "licit",
        Label::Unknown => "unknown",
    }
}

impl ShutdownReport {
    /// Aligned plain-text tables.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let b = self.options.boundary;
        let _ = writeln!(s, "Top-{} chi-square features (before: 1-{}, after: {b}-)", self.options.top, b - 1);
        let _ = writeln!(s, "{:>4}  {:>8} {:>14}  {:>8} {:>14}", "rank", "before", "chi2", "after", "chi2");
        for i in 0..self.top_before.len().max(self.top_after.len()) {
            let cell = |v: Option<&(usize, f64)>| {
                v.map_or((String::new(), String::new()), |e| (col_name(e.0), format!("{:.4}", e.1)))
            };
            let (fb, cb) = cell(self.top_before.get(i));
            let (fa, ca) = cell(self.top_after.get(i));
            let _ = writeln!(s, "{:>4}  {fb:>8} {cb:>14}  {fa:>8} {ca:>14}", i + 1);
        }
        let names: Vec<String> = self.common.iter().map(|&f| col_name(f)).collect();
        let _ = writeln!(s, "\nCommon features ({}): {}", self.common.len(), names.join(", "));
        let _ = writeln!(
            s,
            "\nMoment summary (stdev n-1; adjusted skewness; adjusted excess kurtosis)"
        );
        let _ = writeln!(
            s,
            "{:<16} {:>8} {:>8} {:>10} {:>10} {:>10} {:>10}",
            "category", "feature", "n", "mean", "stdev", "skewness", "kurtosis"
        );
        for g in &self.summaries {
            let cat = format!("{} {}", label_name(g.label), g.period.name());
            for r in &g.rows {
                let _ = writeln!(
                    s,
                    "{cat:<16} {:>8} {:>8} {:>10.4} {:>10.4} {:>10.4} {:>10.4}",
                    col_name(r.feature_index),
                    r.n,
                    r.mean,
                    r.stdev,
                    r.skewness,
                    r.kurtosis
                );
            }
        }
        let _ = writeln!(s, "\nKS p-values, before vs after");
        let _ = writeln!(s, "{:>8} {:>12} {:>12} {:>8} {:>12} {:>12}", "feature", "licit p", "licit D", "", "illicit p", "illicit D");
        for (f, l, i) in &self.ks {
            let _ = writeln!(
                s,
                "{:>8} {:>12.4e} {:>12.4} {:>8} {:>12.4e} {:>12.4}",
                col_name(*f),
                l.p_value,
                l.d_statistic,
                "",
                i.p_value,
                i.d_statistic
            );
        }
        s
    }

    pub fn chi2_csv(&self) -> String {
        let mut s = String::from("period,rank,feature,chi2\n");
        for (period, list) in [("before", &self.top_before), ("after", &self.top_after)] {
            for (i, (f, c)) in list.iter().enumerate() {
                let _ = writeln!(s, "{period},{},{},{c:.10e}", i + 1, col_name(*f));
            }
        }
        s
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::from("label,period,feature,n,mean,stdev,skewness,kurtosis\n");
        for g in &self.summaries {
            for r in &g.rows {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{:.10e},{:.10e},{:.10e},{:.10e}",
                    label_name(g.label),
                    g.period.name(),
                    col_name(r.feature_index),
                    r.n,
                    r.mean,
                    r.stdev,
                    r.skewness,
                    r.kurtosis
                );
            }
        }
        s
    }

    pub fn ks_csv(&self) -> String {
        let mut s = String::from("feature,label,d,p_value,n_before,n_after\n");
        for (f, l, i) in &self.ks {
            for (name, r) in [("licit", l), ("illicit", i)] {
                let _ = writeln!(
                    s,
                    "{},{name},{:.10e},{:.10e},{},{}",
                    col_name(*f),
                    r.d_statistic,
                    r.p_value,
                    r.n1,
                    r.n2
                );
            }
        }
        s
    }
}
