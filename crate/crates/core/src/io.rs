//! File formats: edge lists, snapshot streams, table CSV and run metadata.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, RggmError};
use crate::fit::Snapshot;
use crate::graph::{EdgeConfig, Topology};
use crate::model::NodeVector;
use crate::oracle::MeasureTable;

/// A topology read from an edge list together with the original node labels.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelledGraph {
    pub topology: Topology,
    /// `labels[id]` is the label of dense node `id`, in order of first appearance.
    pub labels: Vec<String>,
}

impl LabelledGraph {
    /// Label of edge `k` as `"u-v"`.
    pub fn edge_label(&self, k: usize) -> String {
        let (i, j) = self.topology.edge(k);
        format!("{}-{}", self.labels[i], self.labels[j])
    }

    /// Plain graph with nodes labelled `0..m`.
    pub fn unlabelled(topology: Topology) -> Self {
        let labels = (0..topology.num_nodes()).map(|i| i.to_string()).collect();
        Self { topology, labels }
    }
}

/// Parses a whitespace-separated edge list. `#` starts a comment; blank lines are skipped.
pub fn parse_graph(text: &str) -> Result<LabelledGraph> {
    let mut ids: HashMap<String, usize> = HashMap::new();
    let mut labels = Vec::new();
    let mut edges = Vec::new();
    let mut seen: HashMap<(usize, usize), usize> = HashMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != 2 {
            return Err(RggmError::Data(format!(
                "line {}: expected two node labels, found {}",
                lineno + 1,
                tokens.len()
            )));
        }
        if tokens[0] == tokens[1] {
            return Err(RggmError::Data(format!(
                "line {}: self-loop at node {:?}",
                lineno + 1,
                tokens[0]
            )));
        }
        let mut id = |label: &str| {
            *ids.entry(label.to_string()).or_insert_with(|| {
                labels.push(label.to_string());
                labels.len() - 1
            })
        };
        let (u, v) = (id(tokens[0]), id(tokens[1]));
        let key = (u.min(v), u.max(v));
        if let Some(first) = seen.insert(key, lineno + 1) {
            return Err(RggmError::Data(format!(
                "line {}: duplicate edge {}-{} (first on line {first})",
                lineno + 1,
                tokens[0],
                tokens[1]
            )));
        }
        edges.push((u, v));
    }
    let topology = Topology::new(labels.len(), edges)?;
    Ok(LabelledGraph { topology, labels })
}

pub fn load_graph(path: &Path) -> Result<LabelledGraph> {
    let text = fs::read_to_string(path)
        .map_err(|e| RggmError::Data(format!("cannot read graph {}: {e}", path.display())))?;
    parse_graph(&text)
}

/// Hex SHA-256 of the canonical form `m` followed by one `i j` line per edge.
pub fn topology_hash(top: &Topology) -> String {
    let mut h = Sha256::new();
    h.update(format!("{}\n", top.num_nodes()).as_bytes());
    for &(i, j) in top.edges() {
        h.update(format!("{i} {j}\n").as_bytes());
    }
    hex::encode(h.finalize())
}

/// Provenance header written at the top of every output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub tool: String,
    pub version: String,
    /// The parsed command line, field by field.
    pub run_config: serde_json::Value,
    pub seed: Option<u64>,
    pub topology_hash: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub node_labels: Option<Vec<String>>,
}

impl Metadata {
    pub fn new(run_config: serde_json::Value, seed: Option<u64>, graph: Option<&LabelledGraph>) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            run_config,
            seed,
            topology_hash: graph.map(|g| topology_hash(&g.topology)),
            node_labels: graph.map(|g| g.labels.clone()),
        }
    }
}

#[derive(Serialize)]
struct MetadataLine<'a> {
    metadata: &'a Metadata,
}

/// Writes `{"metadata": ...}` as one line.
pub fn write_metadata_line(w: &mut dyn Write, meta: &Metadata) -> Result<()> {
    serde_json::to_writer(&mut *w, &MetadataLine { metadata: meta })?;
    w.write_all(b"\n")?;
    Ok(())
}

/// Metadata as a CSV comment line.
pub fn write_metadata_comment(w: &mut dyn Write, meta: &Metadata) -> Result<()> {
    w.write_all(b"# ")?;
    write_metadata_line(w, meta)
}

/// Reads the metadata header back from the first line of an output file.
pub fn read_metadata(path: &Path) -> Result<Metadata> {
    let file = fs::File::open(path)?;
    let mut first = String::new();
    BufReader::new(file).read_line(&mut first)?;
    let body = first.trim().trim_start_matches('#').trim();
    #[derive(Deserialize)]
    struct Line {
        metadata: Metadata,
    }
    let line: Line = serde_json::from_str(body)
        .map_err(|e| RggmError::Data(format!("{}: no metadata header: {e}", path.display())))?;
    Ok(line.metadata)
}

#[derive(Serialize, Deserialize)]
struct SnapshotLine {
    config_bits_hex: String,
    x: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    weight: Option<f64>,
}

/// Parses a JSONL snapshot stream against `top`.
///
/// Lines holding a `metadata` or `summary` object are skipped, so sampler
/// output can be fed straight back in. A missing weight means 1.
pub fn parse_snapshots(text: &str, top: &Topology) -> Result<Vec<Snapshot>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let ctx = |msg: String| RggmError::Data(format!("snapshot line {}: {msg}", lineno + 1));
        let value: serde_json::Value = serde_json::from_str(line).map_err(|e| ctx(e.to_string()))?;
        if value.get("metadata").is_some() || value.get("summary").is_some() {
            continue;
        }
        let rec: SnapshotLine = serde_json::from_value(value).map_err(|e| ctx(e.to_string()))?;
        let config = EdgeConfig::from_hex(top.num_edges(), &rec.config_bits_hex).map_err(|e| ctx(e.to_string()))?;
        let x = rec.x.ok_or_else(|| ctx("missing node values `x`".into()))?;
        if x.len() != top.num_nodes() {
            return Err(ctx(format!(
                "x has {} entries but the graph has {} nodes",
                x.len(),
                top.num_nodes()
            )));
        }
        let x = NodeVector::new(x).map_err(|e| ctx(e.to_string()))?;
        out.push(Snapshot::new(config, x, rec.weight.unwrap_or(1.0)).map_err(|e| ctx(e.to_string()))?);
    }
    Ok(out)
}

pub fn load_snapshots(path: &Path, top: &Topology) -> Result<Vec<Snapshot>> {
    let text = fs::read_to_string(path)
        .map_err(|e| RggmError::Data(format!("cannot read snapshots {}: {e}", path.display())))?;
    parse_snapshots(&text, top)
}

/// Writes snapshots as JSONL, preceded by `meta` when given. Unit weights are omitted.
pub fn write_snapshots(w: &mut dyn Write, snaps: &[Snapshot], meta: Option<&Metadata>) -> Result<()> {
    if let Some(m) = meta {
        write_metadata_line(w, m)?;
    }
    for s in snaps {
        let line = SnapshotLine {
            config_bits_hex: s.config.to_hex(),
            x: Some(s.x.as_slice().to_vec()),
            weight: (s.weight != 1.0).then_some(s.weight),
        };
        serde_json::to_writer(&mut *w, &line)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

fn bit_string(a: &EdgeConfig) -> String {
    (0..a.len()).map(|k| if a.get(k) { '1' } else { '0' }).collect()
}

/// Compact table: `config_hex, config_bits, half_logdet, prob`, one row per configuration.
/// `config_bits` lists edges in canonical order, edge 0 first.
pub fn write_table_csv(w: &mut dyn Write, table: &MeasureTable) -> Result<()> {
    writeln!(w, "config_hex,config_bits,half_logdet,prob")?;
    for row in table.rows() {
        writeln!(
            w,
            "{},{},{:.17e},{:.17e}",
            row.config.to_hex(),
            bit_string(&row.config),
            row.half_logdet,
            row.prob
        )?;
    }
    Ok(())
}

/// Plot-ready table with one 0/1 column per edge, named by its node labels.
pub fn write_wide_table_csv(w: &mut dyn Write, table: &MeasureTable, graph: &LabelledGraph) -> Result<()> {
    let n = graph.topology.num_edges();
    let mut header = vec!["config_hex".to_string()];
    header.extend((0..n).map(|k| graph.edge_label(k)));
    header.extend(["edges_on", "half_logdet", "log_prob", "prob"].map(String::from));
    writeln!(w, "{}", header.join(","))?;
    for row in table.rows() {
        let mut cells = vec![row.config.to_hex()];
        cells.extend((0..n).map(|k| if row.config.get(k) { "1" } else { "0" }.to_string()));
        cells.push(row.config.count_ones().to_string());
        cells.push(format!("{:.17e}", row.half_logdet));
        cells.push(format!("{:.17e}", row.half_logdet - table.log_kappa()));
        cells.push(format!("{:.17e}", row.prob));
        writeln!(w, "{}", cells.join(","))?;
    }
    Ok(())
}
