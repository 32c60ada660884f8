use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::{GraphSnapshot, Label, TemporalGraph};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const ELLIPTIC_FEATURES: &str = "elliptic_txs_features.csv";
pub const ELLIPTIC_CLASSES: &str = "elliptic_txs_classes.csv";
pub const ELLIPTIC_EDGES: &str = "elliptic_txs_edgelist.csv";

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn invalid(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Validation {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Loads the three standard file names from `dir`.
pub fn load_elliptic_dir(dir: &Path) -> Result<TemporalGraph> {
    load_elliptic(
        &dir.join(ELLIPTIC_FEATURES),
        &dir.join(ELLIPTIC_CLASSES),
        &dir.join(ELLIPTIC_EDGES),
    )
}

struct NodeRow {
    id: String,
    timestep: usize,
    features: Vec<f64>,
    line: usize,
}

/// Parses the Elliptic CSV layout.
///
/// The features file has no header and holds `txId, f1..fd` per row, where
/// `f1` is the timestep. Ids are kept as opaque strings.
pub fn load_elliptic(features: &Path, classes: &Path, edges: &Path) -> Result<TemporalGraph> {
    let feat_text = read(features)?;
    let class_text = read(classes)?;
    let edge_text = read(edges)?;

    let mut rows = Vec::new();
    let mut width = None;
    for (i, raw) in feat_text.lines().enumerate() {
        let line = i + 1;
        let raw = raw.trim_end_matches('\r');
        if raw.is_empty() {
            continue;
        }
        let mut fields = raw.split(',');
        let id = fields.next().unwrap_or_default().to_string();
        let values: Vec<f64> = fields
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|e| parse_err(features, line, format!("bad number {f:?}: {e}")))
            })
            .collect::<Result<_>>()?;
        let w = *width.get_or_insert(values.len());
        if values.len() != w || w == 0 {
            return Err(parse_err(
                features,
                line,
                format!("expected {} columns, found {}", w + 1, values.len() + 1),
            ));
        }
        let ts = values[0];
        if ts < 1.0 || ts.fract() != 0.0 {
            return Err(parse_err(features, line, format!("timestep {ts} is not a positive integer")));
        }
        rows.push(NodeRow {
            id,
            timestep: ts as usize,
            features: values,
            line,
        });
    }
    let width = width.ok_or_else(|| parse_err(features, 1, "no rows"))?;

    // id -> (timestep, local index)
    let mut index: HashMap<&str, (usize, usize)> = HashMap::with_capacity(rows.len());
    let max_t = rows.iter().map(|r| r.timestep).max().unwrap_or(0);
    let mut counts = vec![0usize; max_t + 1];
    for r in &rows {
        if index.contains_key(r.id.as_str()) {
            return Err(invalid(features, r.line, format!("duplicate txId {}", r.id)));
        }
        index.insert(r.id.as_str(), (r.timestep, counts[r.timestep]));
        counts[r.timestep] += 1;
    }
    if let Some(p) = (1..=max_t).find(|&p| counts[p] == 0) {
        return Err(invalid(features, 0, format!("timestep {p} has no nodes")));
    }

    let mut labels: Vec<Vec<Option<Label>>> = (0..=max_t).map(|p| vec![None; counts[p]]).collect();
    let mut class_lines = class_text.lines().enumerate();
    expect_header(classes, class_lines.next(), "txId,class")?;
    for (i, raw) in class_lines {
        let line = i + 1;
        let raw = raw.trim_end_matches('\r');
        if raw.is_empty() {
            continue;
        }
        let (id, code) = raw
            .split_once(',')
            .ok_or_else(|| parse_err(classes, line, "expected 2 columns"))?;
        let label = Label::from_code(code.trim())
            .ok_or_else(|| parse_err(classes, line, format!("unknown class {code:?}")))?;
        let &(t, j) = index
            .get(id)
            .ok_or_else(|| invalid(classes, line, format!("txId {id} not in features")))?;
        labels[t][j] = Some(label);
    }

    let mut edge_lists: Vec<Vec<(usize, usize)>> = vec![Vec::new(); max_t + 1];
    let mut edge_lines = edge_text.lines().enumerate();
    expect_header(edges, edge_lines.next(), "txId1,txId2")?;
    for (i, raw) in edge_lines {
        let line = i + 1;
        let raw = raw.trim_end_matches('\r');
        if raw.is_empty() {
            continue;
        }
        let (src, dst) = raw
            .split_once(',')
            .ok_or_else(|| parse_err(edges, line, "expected 2 columns"))?;
        let lookup = |id: &str| {
            index
                .get(id)
                .copied()
                .ok_or_else(|| invalid(edges, line, format!("edge row {raw:?}: txId {id} not in features")))
        };
        let (ts, a) = lookup(src)?;
        let (td, b) = lookup(dst.trim())?;
        if ts != td {
            return Err(invalid(
                edges,
                line,
                format!("edge {src}->{dst} joins timesteps {ts} and {td}"),
            ));
        }
        edge_lists[ts].push((a, b));
    }

    let mut per_t: Vec<(Vec<String>, Vec<f64>)> = (0..=max_t)
        .map(|p| (Vec::with_capacity(counts[p]), Vec::with_capacity(counts[p] * width)))
        .collect();
    for r in rows {
        let slot = &mut per_t[r.timestep];
        slot.0.push(r.id);
        slot.1.extend_from_slice(&r.features);
    }

    let mut snapshots = Vec::with_capacity(max_t);
    for (p, ((ids, feats), (labs, edges_p))) in per_t
        .into_iter()
        .zip(labels.into_iter().zip(edge_lists))
        .enumerate()
        .skip(1)
    {
        let labs = labs
            .into_iter()
            .enumerate()
            .map(|(j, l)| {
                l.ok_or_else(|| invalid(classes, 0, format!("txId {} has no class row", ids[j])))
            })
            .collect::<Result<Vec<_>>>()?;
        let n = ids.len();
        snapshots.push(GraphSnapshot::new(p, ids, Matrix::new(n, width, feats)?, labs, edges_p)?);
    }
    TemporalGraph::new(snapshots)
}

fn expect_header(path: &Path, first: Option<(usize, &str)>, want: &str) -> Result<()> {
    match first {
        Some((_, h)) if h.trim().eq_ignore_ascii_case(want) => Ok(()),
        Some((_, h)) => Err(parse_err(path, 1, format!("expected header {want:?}, found {h:?}"))),
        None => Err(parse_err(path, 1, format!("missing header {want:?}"))),
    }
}

/// Writes a graph in the Elliptic layout (used for fixtures and exports).
pub fn write_elliptic(graph: &TemporalGraph, dir: &Path) -> Result<[PathBuf; 3]> {
    use std::fmt::Write;
    let mut feats = String::new();
    let mut classes = String::from("txId,class\n");
    let mut edges = String::from("txId1,txId2\n");
    for s in graph.snapshots() {
        for (i, id) in s.node_ids.iter().enumerate() {
            feats.push_str(id);
            for v in s.features.row(i) {
                write!(feats, ",{v}").expect("string write");
            }
            feats.push('\n');
            writeln!(classes, "{id},{}", s.labels[i].code()).expect("string write");
        }
        for &(a, b) in &s.edges {
            writeln!(edges, "{},{}", s.node_ids[a], s.node_ids[b]).expect("string write");
        }
    }
    let paths = [
        dir.join(ELLIPTIC_FEATURES),
        dir.join(ELLIPTIC_CLASSES),
        dir.join(ELLIPTIC_EDGES),
    ];
    for (p, body) in paths.iter().zip([feats, classes, edges]) {
        fs::write(p, body).map_err(|e| Error::io(p, e))?;
    }
    Ok(paths)
}
