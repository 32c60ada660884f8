use serde::{Deserialize, Serialize};

use super::metrics::{fmt_opt, MeanStd, Window};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub epoch: usize,
    /// `pretrain`, `train` or `test`.
    pub split: String,
    pub timestep: Option<usize>,
    pub loss: Option<f64>,
    pub illicit_f1: Option<f64>,
    pub micro_f1: Option<f64>,
}

/// Evaluated-epoch history of one run. Wall-clock time is kept apart from
/// the records so that identical runs serialize to identical CSVs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub seed: u64,
    pub records: Vec<LogRecord>,
    #[serde(skip)]
    pub wall_seconds: f64,
}

impl RunLog {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            ..Default::default()
        }
    }

    pub fn push(&mut self, r: LogRecord) {
        debug_assert!(self.records.last().is_none_or(|l| l.epoch <= r.epoch));
        self.records.push(r);
    }

    /// Records of one split with no timestep, i.e. the pooled rows.
    pub fn pooled(&self, split: &str) -> impl Iterator<Item = &LogRecord> {
        let split = split.to_string();
        self.records
            .iter()
            .filter(move |r| r.split == split && r.timestep.is_none())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,split,timestep,loss,illicit_f1,micro_f1\n");
        for r in &self.records {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.epoch,
                r.split,
                r.timestep.map(|t| t.to_string()).unwrap_or_default(),
                fmt_opt(r.loss),
                fmt_opt(r.illicit_f1),
                fmt_opt(r.micro_f1)
            ));
        }
        s
    }
}

/// Window scores at every evaluated epoch, spread across runs: for each
/// epoch and window, the mean over runs of the window's mean per-timestep
/// test illicit F1.
pub fn epoch_window_table(logs: &[RunLog], windows: &[Window]) -> Vec<(usize, Vec<MeanStd>)> {
    let mut epochs: Vec<usize> = logs
        .iter()
        .flat_map(|l| l.records.iter().filter(|r| r.split == "test").map(|r| r.epoch))
        .collect();
    epochs.sort_unstable();
    epochs.dedup();
    epochs
        .into_iter()
        .map(|e| {
            let cells = windows
                .iter()
                .map(|w| {
                    let per_run: Vec<f64> = logs
                        .iter()
                        .filter_map(|l| {
                            let f1: Vec<f64> = l
                                .records
                                .iter()
                                .filter(|r| r.epoch == e && r.split == "test")
                                .filter(|r| r.timestep.is_some_and(|t| w.range.contains(t)))
                                .filter_map(|r| r.illicit_f1)
                                .collect();
                            (!f1.is_empty()).then(|| f1.iter().sum::<f64>() / f1.len() as f64)
                        })
                        .collect();
                    MeanStd::of(&per_run)
                })
                .collect();
            (e, cells)
        })
        .collect()
}

pub fn render_epoch_window_table(title: &str, windows: &[Window], rows: &[(usize, Vec<MeanStd>)]) -> String {
    let mut s = format!("{title}\n{:>6}", "epoch");
    for w in windows {
        s.push_str(&format!("  {:<18}", w.name));
    }
    s.push('\n');
    for (e, cells) in rows {
        s.push_str(&format!("{e:>6}"));
        for c in cells {
            s.push_str(&format!("  {:<18}", c.to_string()));
        }
        s.push('\n');
    }
    s
}

pub fn epoch_window_csv(windows: &[Window], rows: &[(usize, Vec<MeanStd>)]) -> String {
    let mut s = String::from("epoch,window,illicit_f1_mean,illicit_f1_std,runs\n");
    for (e, cells) in rows {
        for (w, c) in windows.iter().zip(cells) {
            s.push_str(&format!("{e},{},{:.6},{:.6},{}\n", w.name, c.mean, c.std, c.n));
        }
    }
    s
}
