//! Run configuration: defaults, then a JSON file of flat dotted keys
//! (`"model.d_h": 32`), then command-line flags. Later sources win.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use dynberg::batching::BatchingConfig;
use dynberg::graph::{SplitConfig, SyntheticConfig};
use dynberg::model::ModelConfig;
use dynberg::training::TrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    /// Directory holding the three Elliptic CSV files.
    pub dir: Option<PathBuf>,
    pub synthetic: bool,
    #[serde(rename = "gen")]
    pub generator: SyntheticConfig,
    /// Z-score features with train-view statistics.
    pub standardize: bool,
    /// Where `preprocess` writes graph and batch caches; other commands
    /// read from it when the files are present.
    pub cache_dir: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            dir: None,
            synthetic: false,
            // sized to the Elliptic timeline so the default split applies
            generator: SyntheticConfig {
                timesteps: 49,
                nodes_per_step: 30,
                timestep_feature: true,
                ..Default::default()
            },
            standardize: true,
            cache_dir: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunSection {
    pub seeds: Vec<u64>,
    /// Output directory; `runs/<timestamp>-<command>` when unset.
    pub out: Option<PathBuf>,
    pub parallel_seeds: bool,
    pub skip_pretrain: bool,
    pub checkpoint: Option<PathBuf>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seeds: (0..10).collect(),
            out: None,
            parallel_seeds: false,
            skip_pretrain: false,
            checkpoint: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub k: Vec<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { k: (3..=15).collect() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisConfig {
    pub clusters: usize,
    pub acf_lags: usize,
    pub bins: usize,
    pub top: usize,
    pub pca_skip_timestep: bool,
    pub shutdown_skip_timestep: bool,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            clusters: 3,
            acf_lags: 10,
            bins: 10,
            top: 10,
            pca_skip_timestep: false,
            shutdown_skip_timestep: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub split: SplitConfig,
    pub batching: BatchingConfig,
    pub run: RunSection,
    pub sweep: SweepConfig,
    pub analysis: AnalysisConfig,
}

/// Dotted-key view of a JSON object. Arrays and scalars are leaves.
pub fn flatten(v: &Value) -> BTreeMap<String, Value> {
    fn walk(prefix: &str, v: &Value, out: &mut BTreeMap<String, Value>) {
        match v {
            Value::Object(m) if !m.is_empty() || prefix.is_empty() => {
                for (k, v) in m {
                    let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(&key, v, out);
                }
            }
            _ => {
                out.insert(prefix.to_string(), v.clone());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk("", v, &mut out);
    out
}

pub fn unflatten(flat: &BTreeMap<String, Value>) -> Value {
    let mut root = Map::new();
    for (key, v) in flat {
        let mut node = &mut root;
        let mut parts = key.split('.').peekable();
        while let Some(p) = parts.next() {
            if parts.peek().is_none() {
                node.insert(p.to_string(), v.clone());
            } else {
                node = node
                    .entry(p.to_string())
                    .or_insert_with(|| Value::Object(Map::new()))
                    .as_object_mut()
                    .expect("keys never prefix a leaf");
            }
        }
    }
    Value::Object(root)
}

/// Collects overrides and resolves them against the defaults.
#[derive(Default)]
pub struct Resolver {
    values: BTreeMap<String, Value>,
    explicit: BTreeSet<String>,
}

impl Resolver {
    pub fn new() -> Self {
        let defaults = serde_json::to_value(RunConfig::default()).expect("config serializes");
        Self {
            values: flatten(&defaults),
            explicit: BTreeSet::new(),
        }
    }

    pub fn set(&mut self, key: &str, value: Value) -> Result<(), CliError> {
        // a null default may take a structured value, e.g. `data.gen.drift`
        let known = self.values.contains_key(key)
            || self
                .values
                .keys()
                .any(|k| key.starts_with(&format!("{k}.")) && self.values[k].is_null());
        if !known {
            return Err(CliError::Config(format!("unknown config key {key:?}")));
        }
        self.values.insert(key.to_string(), value);
        self.explicit.insert(key.to_string());
        Ok(())
    }

    /// `key=value`; the value is parsed as JSON and falls back to a string.
    pub fn set_pair(&mut self, pair: &str) -> Result<(), CliError> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--set expects key=value, got {pair:?}")))?;
        let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
        self.set(k.trim(), value)
    }

    pub fn load_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let v: Value =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if !v.is_object() {
            return Err(CliError::Config(format!("{}: expected a JSON object", path.display())));
        }
        for (k, v) in flatten(&v) {
            self.set(&k, v)?;
        }
        Ok(())
    }

    pub fn is_explicit(&self, key: &str) -> bool {
        self.explicit.contains(key)
    }

    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        // drop leaves shadowed by a structured override of a null default
        let flat: BTreeMap<String, Value> = self
            .values
            .iter()
            .filter(|(k, v)| {
                !(v.is_null() && self.values.keys().any(|other| other.starts_with(&format!("{k}."))))
            })
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        serde_json::from_value(unflatten(&flat)).map_err(|e| CliError::Config(format!("invalid config: {e}")))
    }
}

impl RunConfig {
    pub fn to_flat_json(&self) -> String {
        let flat = flatten(&serde_json::to_value(self).expect("config serializes"));
        let obj: Map<String, Value> = flat.into_iter().collect();
        serde_json::to_string_pretty(&Value::Object(obj)).expect("config serializes") + "\n"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_round_trip() {
        let cfg = RunConfig::default();
        let flat = flatten(&serde_json::to_value(&cfg).unwrap());
        assert!(flat.contains_key("model.d_h"));
        assert!(flat.contains_key("split.train"));
        let back: RunConfig = serde_json::from_value(unflatten(&flat)).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn overrides_and_unknown_keys() {
        let mut r = Resolver::new();
        r.set_pair("model.d_h=8").unwrap();
        r.set_pair("split.train=1-3").unwrap();
        r.set_pair("data.gen.drift={\"from_timestep\": 3, \"shift\": 1.5}").unwrap();
        let cfg = r.resolve().unwrap();
        assert_eq!(cfg.model.d_h, 8);
        assert_eq!(cfg.split.train.end, 3);
        assert_eq!(cfg.data.generator.drift.unwrap().shift, 1.5);
        assert!(r.is_explicit("model.d_h"));
        assert!(r.set_pair("model.width=3").is_err());
        assert!(r.set_pair("model.d_h").is_err());
        r.set_pair("model.d_h=\"wide\"").unwrap();
        assert!(r.resolve().is_err());
    }

    #[test]
    fn persisted_config_reloads_identically() {
        let mut r = Resolver::new();
        r.set_pair("train.epochs=7").unwrap();
        r.set_pair("run.seeds=[4,5]").unwrap();
        let cfg = r.resolve().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        fs::write(&path, cfg.to_flat_json()).unwrap();
        let mut again = Resolver::new();
        again.load_file(&path).unwrap();
        assert_eq!(again.resolve().unwrap(), cfg);
    }
}
