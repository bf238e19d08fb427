//! CSV ingestion and export.
//!
//! - `nodes.csv`: `node_id,node_type,feat_0,...,feat_{k-1}`
//! - `edges.csv`: `src,dst,edge_type`
//! - `labels.csv`: `node_id,class`

use std::collections::HashSet;
use std::path::Path;

use super::{ClassId, GraphError, HeteroGraph, NodeId, NodeSpec};

fn ingest(file: &Path, row: usize, msg: impl Into<String>) -> GraphError {
    GraphError::Ingest {
        file: file.display().to_string(),
        row,
        msg: msg.into(),
    }
}

fn parse<T: std::str::FromStr>(file: &Path, row: usize, field: Option<&str>, what: &str) -> Result<T, GraphError> {
    let raw = field.ok_or_else(|| ingest(file, row, format!("missing {what}")))?;
    raw.trim()
        .parse()
        .map_err(|_| ingest(file, row, format!("bad {what} {raw:?}")))
}

/// Reads the three CSV files. Rows are numbered from 1 after the header.
pub fn load_graph(
    node_file: &Path,
    edge_file: &Path,
    label_file: &Path,
    d_in: usize,
) -> Result<HeteroGraph, GraphError> {
    let mut nodes = Vec::new();
    let mut seen = HashSet::new();
    for (k, rec) in csv::Reader::from_path(node_file)?.records().enumerate() {
        let rec = rec?;
        let row = k + 1;
        let id: NodeId = parse(node_file, row, rec.get(0), "node_id")?;
        if !seen.insert(id) {
            return Err(ingest(node_file, row, format!("duplicate node id {id}")));
        }
        let node_type = rec
            .get(1)
            .ok_or_else(|| ingest(node_file, row, "missing node_type"))?
            .trim()
            .to_string();
        let features = (2..rec.len())
            .map(|c| parse(node_file, row, rec.get(c), "feature"))
            .collect::<Result<Vec<f64>, _>>()?;
        nodes.push(NodeSpec {
            id,
            node_type,
            features,
        });
    }

    let mut edges = Vec::new();
    for (k, rec) in csv::Reader::from_path(edge_file)?.records().enumerate() {
        let rec = rec?;
        let row = k + 1;
        let src: NodeId = parse(edge_file, row, rec.get(0), "src")?;
        let dst: NodeId = parse(edge_file, row, rec.get(1), "dst")?;
        for id in [src, dst] {
            if !seen.contains(&id) {
                return Err(ingest(edge_file, row, format!("unknown node id {id}")));
            }
        }
        let edge_type = rec.get(2).unwrap_or("").trim().to_string();
        edges.push((src, dst, edge_type));
    }

    let mut labels = Vec::new();
    for (k, rec) in csv::Reader::from_path(label_file)?.records().enumerate() {
        let rec = rec?;
        let row = k + 1;
        let id: NodeId = parse(label_file, row, rec.get(0), "node_id")?;
        if !seen.contains(&id) {
            return Err(ingest(label_file, row, format!("unknown node id {id}")));
        }
        let class: ClassId = parse(label_file, row, rec.get(1), "class")?;
        labels.push((id, class));
    }

    let g = HeteroGraph::build(nodes, edges, labels, d_in)?;
    g.schema().validate()?;
    Ok(g)
}

/// Writes `nodes.csv`, `edges.csv` and `labels.csv` into `dir`.
pub fn write_graph(g: &HeteroGraph, dir: &Path) -> Result<(), GraphError> {
    std::fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("nodes.csv"))?;
    let mut header = vec!["node_id".to_string(), "node_type".to_string()];
    header.extend((0..g.feature_dim()).map(|k| format!("feat_{k}")));
    w.write_record(&header)?;
    for i in 0..g.num_nodes() {
        let mut rec = vec![g.node_id(i).to_string(), g.node_type(i).to_string()];
        rec.extend(g.features().row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("edges.csv"))?;
    w.write_record(["src", "dst", "edge_type"])?;
    for e in g.edges() {
        w.write_record([
            g.node_id(e.src).to_string(),
            g.node_id(e.dst).to_string(),
            e.edge_type.clone(),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("labels.csv"))?;
    w.write_record(["node_id", "class"])?;
    for (i, c) in g.labels() {
        w.write_record([g.node_id(i).to_string(), c.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `nodes.csv`, `edges.csv` and `labels.csv` from `dir`, taking the
/// feature width from the node file header.
pub fn load_graph_dir(dir: &Path) -> Result<HeteroGraph, GraphError> {
    let node_file = dir.join("nodes.csv");
    let header = csv::Reader::from_path(&node_file)?.headers()?.len();
    if header < 2 {
        return Err(ingest(&node_file, 0, "header needs node_id and node_type"));
    }
    load_graph(&node_file, &dir.join("edges.csv"), &dir.join("labels.csv"), header - 2)
}
