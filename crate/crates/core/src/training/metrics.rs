use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::TimestepRange;

/// Binary confusion counts with illicit as the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn record(&mut self, truth_illicit: bool, pred_illicit: bool) {
        match (truth_illicit, pred_illicit) {
            (true, true) => self.tp += 1,
            (false, true) => self.fp += 1,
            (true, false) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// `2TP / (2TP + FP + FN)`, and 0 when there are neither predicted nor
    /// actual illicit nodes.
    pub fn illicit_f1(&self) -> f64 {
        let d = 2 * self.tp + self.fp + self.fn_;
        if d == 0 {
            0.0
        } else {
            (2 * self.tp) as f64 / d as f64
        }
    }

    /// Micro-averaged F1 over both classes, which for single-label
    /// prediction equals accuracy.
    pub fn micro_f1(&self) -> f64 {
        if self.total() == 0 {
            0.0
        } else {
            (self.tp + self.tn) as f64 / self.total() as f64
        }
    }
}

impl std::ops::AddAssign for Confusion {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.tn += o.tn;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimestepMetrics {
    pub timestep: usize,
    pub confusion: Confusion,
    pub illicit_f1: f64,
    pub micro_f1: f64,
    /// Weighted cross-entropy over the labeled nodes; `None` when none are labeled.
    pub loss: Option<f64>,
}

/// A named inclusive timestep range for aggregate reporting.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub name: String,
    pub range: TimestepRange,
}

impl Window {
    pub fn new(range: TimestepRange) -> Self {
        Self {
            name: range.to_string(),
            range,
        }
    }

    pub fn named(name: impl Into<String>, range: TimestepRange) -> Self {
        Self {
            name: name.into(),
            range,
        }
    }

    /// Parses `"35-37,38-40"`.
    pub fn parse_list(spec: &str) -> Result<Vec<Window>> {
        let out: Vec<Window> = spec
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map(Window::new))
            .collect::<Result<_>>()?;
        if out.is_empty() {
            return Err(Error::contract(format!("no windows in {spec:?}")));
        }
        Ok(out)
    }

    /// Three-step windows over `test`, then the split at `boundary`: the
    /// pre-shutdown window ends at `boundary - 1`, the post-shutdown window
    /// starts at `boundary`.
    pub fn defaults(test: TimestepRange, boundary: usize) -> Vec<Window> {
        let mut out = shutdown_windows(test, boundary);
        let mut start = test.start;
        while start + 2 <= test.end {
            out.push(Window::new(TimestepRange::new(start, start + 2).expect("ordered")));
            start += 3;
        }
        out
    }
}

pub fn shutdown_windows(test: TimestepRange, boundary: usize) -> Vec<Window> {
    let mut out = Vec::new();
    if boundary > test.start {
        let end = (boundary - 1).min(test.end);
        out.push(Window::named("pre-shutdown", TimestepRange::new(test.start, end).expect("ordered")));
    }
    if boundary <= test.end {
        let start = boundary.max(test.start);
        out.push(Window::named("post-shutdown", TimestepRange::new(start, test.end).expect("ordered")));
    }
    out
}

/// Mean and sample standard deviation; the deviation is 0 for one value.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self::default();
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, std, n }
    }
}

/// Renders as `mean(stddev)` with four decimals.
impl fmt::Display for MeanStd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.4}({:.4})", self.mean, self.std)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowMetrics {
    pub window: Window,
    /// Timesteps of the window present in the report.
    pub timesteps: Vec<usize>,
    /// Spread of per-timestep illicit F1 inside the window.
    pub illicit_f1: MeanStd,
    pub micro_f1: MeanStd,
    /// F1 of the window's pooled confusion counts.
    pub pooled_illicit_f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_timestep: Vec<TimestepMetrics>,
    pub pooled: Confusion,
    pub illicit_f1: f64,
    pub micro_f1: f64,
    /// Weighted cross-entropy pooled over every labeled node.
    pub loss: Option<f64>,
    pub windows: Vec<WindowMetrics>,
}

impl MetricsReport {
    /// `loss_sum` and `weight_sum` are the pooled numerator and denominator
    /// of the weighted cross-entropy.
    pub fn new(per_timestep: Vec<TimestepMetrics>, loss_sum: f64, weight_sum: f64, windows: &[Window]) -> Self {
        let mut pooled = Confusion::default();
        for t in &per_timestep {
            pooled += t.confusion;
        }
        let windows = windows
            .iter()
            .filter_map(|w| {
                let inside: Vec<&TimestepMetrics> =
                    per_timestep.iter().filter(|t| w.range.contains(t.timestep)).collect();
                if inside.is_empty() {
                    return None;
                }
                let mut c = Confusion::default();
                for t in &inside {
                    c += t.confusion;
                }
                let f1: Vec<f64> = inside.iter().map(|t| t.illicit_f1).collect();
                let micro: Vec<f64> = inside.iter().map(|t| t.micro_f1).collect();
                Some(WindowMetrics {
                    window: w.clone(),
                    timesteps: inside.iter().map(|t| t.timestep).collect(),
                    illicit_f1: MeanStd::of(&f1),
                    micro_f1: MeanStd::of(&micro),
                    pooled_illicit_f1: c.illicit_f1(),
                })
            })
            .collect();
        Self {
            illicit_f1: pooled.illicit_f1(),
            micro_f1: pooled.micro_f1(),
            loss: (weight_sum > 0.0).then(|| loss_sum / weight_sum),
            per_timestep,
            pooled,
            windows,
        }
    }

    pub fn window(&self, name: &str) -> Option<&WindowMetrics> {
        self.windows.iter().find(|w| w.window.name == name)
    }

    /// `timestep,labeled,tp,fp,fn,tn,illicit_f1,micro_f1,loss`.
    pub fn timesteps_csv(&self) -> String {
        let mut s = String::from("timestep,labeled,tp,fp,fn,tn,illicit_f1,micro_f1,loss\n");
        for t in &self.per_timestep {
            let c = t.confusion;
            s.push_str(&format!(
                "{},{},{},{},{},{},{:.6},{:.6},{}\n",
                t.timestep,
                c.total(),
                c.tp,
                c.fp,
                c.fn_,
                c.tn,
                t.illicit_f1,
                t.micro_f1,
                fmt_opt(t.loss)
            ));
        }
        s
    }

    /// `window,start,end,illicit_f1_mean,illicit_f1_std,micro_f1_mean,micro_f1_std,pooled_illicit_f1`.
    pub fn windows_csv(&self) -> String {
        let mut s = String::from(
            "window,start,end,illicit_f1_mean,illicit_f1_std,micro_f1_mean,micro_f1_std,pooled_illicit_f1\n",
        );
        for w in &self.windows {
            s.push_str(&format!(
                "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
                w.window.name,
                w.window.range.start,
                w.window.range.end,
                w.illicit_f1.mean,
                w.illicit_f1.std,
                w.micro_f1.mean,
                w.micro_f1.std,
                w.pooled_illicit_f1
            ));
        }
        s
    }
}

pub(crate) fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// One row of a multi-seed table: a window (or "overall") with the spread
/// of its per-seed illicit and micro F1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub name: String,
    pub illicit_f1: MeanStd,
    pub micro_f1: MeanStd,
}

/// Mean(stddev) across seeds. Per seed, a window contributes the mean of its
/// per-timestep scores and "overall" contributes the pooled test scores.
pub fn aggregate_seeds(reports: &[MetricsReport]) -> Vec<AggregateRow> {
    let Some(first) = reports.first() else {
        return Vec::new();
    };
    let mut rows = vec![AggregateRow {
        name: "overall".into(),
        illicit_f1: MeanStd::of(&reports.iter().map(|r| r.illicit_f1).collect::<Vec<_>>()),
        micro_f1: MeanStd::of(&reports.iter().map(|r| r.micro_f1).collect::<Vec<_>>()),
    }];
    for w in &first.windows {
        let name = &w.window.name;
        let (f1, micro): (Vec<f64>, Vec<f64>) = reports
            .iter()
            .filter_map(|r| r.window(name))
            .map(|w| (w.illicit_f1.mean, w.micro_f1.mean))
            .unzip();
        rows.push(AggregateRow {
            name: name.clone(),
            illicit_f1: MeanStd::of(&f1),
            micro_f1: MeanStd::of(&micro),
        });
    }
    rows
}

/// Aligned plain-text table with a title line.
pub fn render_aggregate(title: &str, rows: &[AggregateRow]) -> String {
    let width = rows.iter().map(|r| r.name.len()).max().unwrap_or(0).max(6);
    let mut s = format!("{title}\n{:<width$}  {:<16}  {:<16}\n", "window", "illicit F1", "micro F1");
    for r in rows {
        s.push_str(&format!(
            "{:<width$}  {:<16}  {:<16}\n",
            r.name,
            r.illicit_f1.to_string(),
            r.micro_f1.to_string()
        ));
    }
    s
}

pub fn aggregate_csv(rows: &[AggregateRow]) -> String {
    let mut s = String::from("window,illicit_f1_mean,illicit_f1_std,micro_f1_mean,micro_f1_std,seeds\n");
    for r in rows {
        s.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6},{}\n",
            r.name, r.illicit_f1.mean, r.illicit_f1.std, r.micro_f1.mean, r.micro_f1.std, r.illicit_f1.n
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn confusion(tp: usize, fp: usize, fn_: usize, tn: usize) -> Confusion {
        Confusion { tp, fp, fn_, tn }
    }

    #[test]
    fn f1_fixtures() {
        let c = confusion(2, 1, 1, 6);
        assert!((c.illicit_f1() - 4.0 / 6.0).abs() < 1e-15);
        assert!((c.micro_f1() - 0.8).abs() < 1e-15);
        assert_eq!(confusion(0, 0, 0, 9).illicit_f1(), 0.0);
        assert_eq!(confusion(0, 0, 0, 9).micro_f1(), 1.0);
        let perfect = confusion(3, 0, 0, 5);
        assert_eq!((perfect.illicit_f1(), perfect.micro_f1()), (1.0, 1.0));
    }

    #[test]
    fn f1_from_recorded_predictions() {
        // brute force: precision and recall from explicit lists
        let truth = [true, true, true, false, false, true, false];
        let pred = [true, false, true, true, false, false, false];
        let mut c = Confusion::default();
        for (&t, &p) in truth.iter().zip(&pred) {
            c.record(t, p);
        }
        let tp = truth.iter().zip(&pred).filter(|(&t, &p)| t && p).count() as f64;
        let precision = tp / pred.iter().filter(|&&p| p).count() as f64;
        let recall = tp / truth.iter().filter(|&&t| t).count() as f64;
        let want = 2.0 * precision * recall / (precision + recall);
        assert!((c.illicit_f1() - want).abs() < 1e-15);
    }

    #[test]
    fn default_windows_match_table_layout() {
        let w = Window::defaults(TimestepRange::new(35, 49).unwrap(), 43);
        let names: Vec<&str> = w.iter().map(|w| w.name.as_str()).collect();
        assert_eq!(
            names,
            ["pre-shutdown", "post-shutdown", "35-37", "38-40", "41-43", "44-46", "47-49"]
        );
        assert_eq!(w[0].range, TimestepRange::new(35, 42).unwrap());
        assert_eq!(w[1].range, TimestepRange::new(43, 49).unwrap());
        assert_eq!(Window::parse_list("35-37, 38-40").unwrap().len(), 2);
        assert!(Window::parse_list("").is_err());
        assert!(Window::parse_list("40-38").is_err());
    }

    #[test]
    fn window_aggregates() {
        let ts = |t, c: Confusion| TimestepMetrics {
            timestep: t,
            confusion: c,
            illicit_f1: c.illicit_f1(),
            micro_f1: c.micro_f1(),
            loss: None,
        };
        let per = vec![ts(1, confusion(1, 0, 0, 1)), ts(2, confusion(0, 0, 1, 1)), ts(3, confusion(1, 1, 0, 0))];
        let windows = [
            Window::new(TimestepRange::new(1, 2).unwrap()),
            Window::new(TimestepRange::new(7, 9).unwrap()),
        ];
        let r = MetricsReport::new(per, 3.0, 2.0, &windows);
        assert_eq!(r.windows.len(), 1);
        let w = &r.windows[0];
        assert_eq!(w.illicit_f1.mean, 0.5);
        assert!((w.illicit_f1.std - 0.5f64.sqrt()).abs() < 1e-15);
        assert!((w.pooled_illicit_f1 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.loss, Some(1.5));
        assert_eq!(r.pooled, confusion(2, 1, 1, 2));
    }

    #[test]
    fn mean_std_display() {
        let m = MeanStd::of(&[0.5, 0.7]);
        assert_eq!(m.to_string(), "0.6000(0.1414)");
        assert_eq!(MeanStd::of(&[0.3]).std, 0.0);
    }
}
