use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{GraphSnapshot, TemporalGraph};
use crate::error::{Error, Result};

/// Inclusive 1-based timestep range, written `a-b` (or `a` for one step).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct TimestepRange {
    pub start: usize,
    pub end: usize,
}

impl TimestepRange {
    pub fn new(start: usize, end: usize) -> Result<Self> {
        if start == 0 || end < start {
            return Err(Error::contract(format!("invalid timestep range {start}-{end}")));
        }
        Ok(Self { start, end })
    }

    pub fn contains(&self, p: usize) -> bool {
        self.start <= p && p <= self.end
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn overlaps(&self, other: &TimestepRange) -> bool {
        self.start <= other.end && other.start <= self.end
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> {
        self.start..=self.end
    }
}

impl FromStr for TimestepRange {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parse = |x: &str| {
            x.trim()
                .parse::<usize>()
                .map_err(|_| Error::contract(format!("bad timestep range {s:?}")))
        };
        match s.split_once('-') {
            Some((a, b)) => Self::new(parse(a)?, parse(b)?),
            None => {
                let p = parse(s)?;
                Self::new(p, p)
            }
        }
    }
}

impl TryFrom<String> for TimestepRange {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<TimestepRange> for String {
    fn from(r: TimestepRange) -> String {
        r.to_string()
    }
}

impl fmt::Display for TimestepRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.start, self.end)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub train: TimestepRange,
    pub test: TimestepRange,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train: TimestepRange { start: 1, end: 34 },
            test: TimestepRange { start: 35, end: 49 },
        }
    }
}

impl SplitConfig {
    pub fn validate(&self, num_timesteps: usize) -> Result<()> {
        if self.train.overlaps(&self.test) {
            return Err(Error::contract(format!(
                "train {} and test {} overlap",
                self.train, self.test
            )));
        }
        for r in [self.train, self.test] {
            if r.end > num_timesteps {
                return Err(Error::contract(format!(
                    "range {r} exceeds the graph's {num_timesteps} timesteps"
                )));
            }
        }
        Ok(())
    }
}

/// Borrowed window onto a contiguous run of timesteps.
#[derive(Clone, Copy, Debug)]
pub struct GraphView<'g> {
    graph: &'g TemporalGraph,
    range: TimestepRange,
}

impl<'g> GraphView<'g> {
    pub fn new(graph: &'g TemporalGraph, range: TimestepRange) -> Result<Self> {
        if range.end > graph.num_timesteps() {
            return Err(Error::contract(format!(
                "range {range} exceeds the graph's {} timesteps",
                graph.num_timesteps()
            )));
        }
        Ok(Self { graph, range })
    }

    pub fn whole(graph: &'g TemporalGraph) -> Result<Self> {
        Self::new(graph, TimestepRange::new(1, graph.num_timesteps())?)
    }

    pub fn graph(&self) -> &'g TemporalGraph {
        self.graph
    }

    pub fn range(&self) -> TimestepRange {
        self.range
    }

    pub fn timesteps(&self) -> impl Iterator<Item = usize> {
        self.range.iter()
    }

    pub fn len(&self) -> usize {
        self.range.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn snapshots(&self) -> impl Iterator<Item = &'g GraphSnapshot> + '_ {
        let g = self.graph;
        self.range.iter().map(move |p| g.snapshot(p).expect("range checked"))
    }
}

/// Train/test views over `graph`; nothing is copied.
pub fn split<'g>(graph: &'g TemporalGraph, cfg: &SplitConfig) -> Result<(GraphView<'g>, GraphView<'g>)> {
    cfg.validate(graph.num_timesteps())?;
    Ok((GraphView::new(graph, cfg.train)?, GraphView::new(graph, cfg.test)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate_synthetic, SyntheticConfig};

    #[test]
    fn ranges_parse_and_print() {
        let r: TimestepRange = "35-49".parse().unwrap();
        assert_eq!((r.start, r.end, r.len()), (35, 49, 15));
        assert_eq!(r.to_string(), "35-49");
        assert_eq!("7".parse::<TimestepRange>().unwrap().len(), 1);
        assert!("0-3".parse::<TimestepRange>().is_err());
        assert!("5-3".parse::<TimestepRange>().is_err());
    }

    #[test]
    fn default_split_has_fifteen_test_steps() {
        let cfg = SplitConfig::default();
        assert_eq!(cfg.test.len(), 15);
        cfg.validate(49).unwrap();
    }

    #[test]
    fn tiny_split_and_overlap() {
        let g = generate_synthetic(&SyntheticConfig::small(2, 6, 0.3, 1)).unwrap();
        let cfg = SplitConfig {
            train: "1-1".parse().unwrap(),
            test: "2-2".parse().unwrap(),
        };
        let (tr, te) = split(&g, &cfg).unwrap();
        assert_eq!(tr.snapshots().count(), 1);
        assert_eq!(te.snapshots().next().unwrap().timestep, 2);

        let bad = SplitConfig {
            train: "1-2".parse().unwrap(),
            test: "2-2".parse().unwrap(),
        };
        assert!(split(&g, &bad).is_err());
    }
}
