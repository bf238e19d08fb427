//! Typed heterogeneous graphs, per-relation adjacency, k-hop subgraphs and
//! common/unique relation algebra.

mod io;
mod subgraph;

pub use io::{load_graph, load_graph_dir, write_graph};
pub use subgraph::{khop_subgraph, Subgraph};

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numcore::Tensor;

pub type NodeId = u64;
pub type ClassId = usize;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("{file} row {row}: {msg}")]
    Ingest { file: String, row: usize, msg: String },
    #[error("unknown node id {0}")]
    UnknownNode(NodeId),
    #[error("invalid graph: {0}")]
    Invalid(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Ordered pair of endpoint node types.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RelationType {
    pub src: String,
    pub dst: String,
}

impl RelationType {
    pub fn new(src: impl Into<String>, dst: impl Into<String>) -> Self {
        Self {
            src: src.into(),
            dst: dst.into(),
        }
    }
}

impl std::fmt::Display for RelationType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{})", self.src, self.dst)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub node_types: BTreeSet<String>,
    pub edge_types: BTreeSet<String>,
    pub relations: BTreeSet<RelationType>,
}

impl Schema {
    /// More than one node type or edge type in total.
    pub fn is_heterogeneous(&self) -> bool {
        self.node_types.len() + self.edge_types.len() > 2
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        for r in &self.relations {
            if !self.node_types.contains(&r.src) || !self.node_types.contains(&r.dst) {
                return Err(GraphError::Invalid(format!(
                    "relation {r} uses a node type outside the schema"
                )));
            }
        }
        Ok(())
    }

    pub fn is_subschema_of(&self, other: &Schema) -> bool {
        self.node_types.is_subset(&other.node_types)
            && self.edge_types.is_subset(&other.edge_types)
            && self.relations.is_subset(&other.relations)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub edge_type: String,
}

/// Immutable heterogeneous graph. Nodes are addressed internally by dense
/// index; external ids are kept for I/O.
#[derive(Clone, Debug)]
pub struct HeteroGraph {
    schema: Schema,
    ids: Vec<NodeId>,
    index: HashMap<NodeId, usize>,
    node_types: Vec<String>,
    features: Tensor,
    edges: Vec<Edge>,
    labels: BTreeMap<usize, ClassId>,
    neighbors: Vec<Vec<usize>>,
    out_edges: Vec<Vec<usize>>,
}

/// A node as handed to [`HeteroGraph::build`].
#[derive(Clone, Debug)]
pub struct NodeSpec {
    pub id: NodeId,
    pub node_type: String,
    pub features: Vec<f64>,
}

impl HeteroGraph {
    /// Assembles a graph from nodes, `(src id, dst id, edge type)` triples
    /// and labels. Features are zero-padded or truncated to `d_in`.
    pub fn build(
        nodes: Vec<NodeSpec>,
        edges: Vec<(NodeId, NodeId, String)>,
        labels: Vec<(NodeId, ClassId)>,
        d_in: usize,
    ) -> Result<Self, GraphError> {
        let mut index = HashMap::with_capacity(nodes.len());
        let mut ids = Vec::with_capacity(nodes.len());
        let mut node_types = Vec::with_capacity(nodes.len());
        let mut feat = Vec::with_capacity(nodes.len() * d_in);
        for (row, n) in nodes.into_iter().enumerate() {
            if index.insert(n.id, row).is_some() {
                return Err(GraphError::Invalid(format!("duplicate node id {}", n.id)));
            }
            ids.push(n.id);
            node_types.push(n.node_type);
            feat.extend((0..d_in).map(|k| n.features.get(k).copied().unwrap_or(0.0)));
        }
        let mut internal_edges = Vec::with_capacity(edges.len());
        for (src, dst, edge_type) in edges {
            let s = *index.get(&src).ok_or(GraphError::UnknownNode(src))?;
            let d = *index.get(&dst).ok_or(GraphError::UnknownNode(dst))?;
            internal_edges.push(Edge {
                src: s,
                dst: d,
                edge_type,
            });
        }
        let mut label_map = BTreeMap::new();
        for (id, class) in labels {
            let i = *index.get(&id).ok_or(GraphError::UnknownNode(id))?;
            label_map.insert(i, class);
        }
        let features = Tensor::new(ids.len(), d_in, feat).expect("feature buffer sized by construction");
        Ok(Self::assemble(
            ids,
            index,
            node_types,
            features,
            internal_edges,
            label_map,
        ))
    }

    fn assemble(
        ids: Vec<NodeId>,
        index: HashMap<NodeId, usize>,
        node_types: Vec<String>,
        features: Tensor,
        edges: Vec<Edge>,
        labels: BTreeMap<usize, ClassId>,
    ) -> Self {
        let n = ids.len();
        let mut schema = Schema::default();
        schema.node_types.extend(node_types.iter().cloned());
        let mut neighbors = vec![Vec::new(); n];
        let mut out_edges = vec![Vec::new(); n];
        for (k, e) in edges.iter().enumerate() {
            schema.edge_types.insert(e.edge_type.clone());
            schema
                .relations
                .insert(RelationType::new(node_types[e.src].clone(), node_types[e.dst].clone()));
            out_edges[e.src].push(k);
            if e.src != e.dst {
                neighbors[e.src].push(e.dst);
                neighbors[e.dst].push(e.src);
            }
        }
        for list in &mut neighbors {
            list.sort_unstable();
            list.dedup();
        }
        Self {
            schema,
            ids,
            index,
            node_types,
            features,
            edges,
            labels,
            neighbors,
            out_edges,
        }
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn num_nodes(&self) -> usize {
        self.ids.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    /// Copy with every feature column shifted to zero mean and scaled to
    /// unit variance over all nodes. Constant columns are only centred.
    pub fn standardized(&self) -> Self {
        let (n, d) = (self.features.rows(), self.features.cols());
        let mut out = self.clone();
        if n == 0 {
            return out;
        }
        for c in 0..d {
            let mean = (0..n).map(|r| self.features.get(r, c)).sum::<f64>() / n as f64;
            let var = (0..n).map(|r| (self.features.get(r, c) - mean).powi(2)).sum::<f64>() / n as f64;
            let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
            for r in 0..n {
                out.features.set(r, c, (self.features.get(r, c) - mean) / sd);
            }
        }
        out
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn node_id(&self, idx: usize) -> NodeId {
        self.ids[idx]
    }

    pub fn index_of(&self, id: NodeId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn node_type(&self, idx: usize) -> &str {
        &self.node_types[idx]
    }

    /// Undirected, deduplicated neighbour indices.
    pub fn neighbors(&self, idx: usize) -> &[usize] {
        &self.neighbors[idx]
    }

    pub(crate) fn out_edges(&self, idx: usize) -> impl Iterator<Item = &Edge> {
        self.out_edges[idx].iter().map(move |&k| &self.edges[k])
    }

    /// Number of incident edges, counting both directions.
    pub fn degree(&self, idx: usize) -> usize {
        self.edges.iter().filter(|e| e.src == idx || e.dst == idx).count()
    }

    /// Incident edge counts for every node.
    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_nodes()];
        for e in &self.edges {
            deg[e.src] += 1;
            if e.dst != e.src {
                deg[e.dst] += 1;
            }
        }
        deg
    }

    pub fn label(&self, idx: usize) -> Option<ClassId> {
        self.labels.get(&idx).copied()
    }

    /// Labelled nodes as `(index, class)` in index order.
    pub fn labels(&self) -> impl Iterator<Item = (usize, ClassId)> + '_ {
        self.labels.iter().map(|(&i, &c)| (i, c))
    }

    pub fn num_labeled(&self) -> usize {
        self.labels.len()
    }

    pub fn classes(&self) -> BTreeSet<ClassId> {
        self.labels.values().copied().collect()
    }

    /// Labelled node indices grouped by class.
    pub fn nodes_by_class(&self) -> BTreeMap<ClassId, Vec<usize>> {
        let mut out: BTreeMap<ClassId, Vec<usize>> = BTreeMap::new();
        for (i, c) in self.labels() {
            out.entry(c).or_default().push(i);
        }
        out
    }

    /// Graph induced by the nodes with `keep[i] == true`. Labels, features
    /// and external ids carry over.
    pub fn induced(&self, keep: &[bool]) -> HeteroGraph {
        let mut remap = vec![usize::MAX; self.num_nodes()];
        let mut ids = Vec::new();
        let mut node_types = Vec::new();
        let mut index = HashMap::new();
        let d = self.feature_dim();
        let mut feat = Vec::new();
        for i in 0..self.num_nodes() {
            if keep[i] {
                remap[i] = ids.len();
                index.insert(self.ids[i], ids.len());
                ids.push(self.ids[i]);
                node_types.push(self.node_types[i].clone());
                feat.extend_from_slice(self.features.row(i));
            }
        }
        let edges = self
            .edges
            .iter()
            .filter(|e| keep[e.src] && keep[e.dst])
            .map(|e| Edge {
                src: remap[e.src],
                dst: remap[e.dst],
                edge_type: e.edge_type.clone(),
            })
            .collect();
        let labels = self
            .labels
            .iter()
            .filter(|(&i, _)| keep[i])
            .map(|(&i, &c)| (remap[i], c))
            .collect();
        let features = Tensor::new(ids.len(), d, feat).expect("rows copied with fixed width");
        Self::assemble(ids, index, node_types, features, edges, labels)
    }

    /// Same graph with the given nodes' labels removed.
    pub fn without_labels(&self, drop: &BTreeSet<usize>) -> HeteroGraph {
        let mut g = self.clone();
        g.labels.retain(|i, _| !drop.contains(i));
        g
    }

    /// Dense adjacency matrices over the whole graph, one per relation.
    pub fn relation_adjacencies(&self) -> BTreeMap<RelationType, Tensor> {
        relation_adjacencies(self)
    }
}

/// `A[r][m][n] = 1` iff some edge `m -> n` has endpoint types matching
/// relation `r`.
pub fn relation_adjacencies(g: &HeteroGraph) -> BTreeMap<RelationType, Tensor> {
    let n = g.num_nodes();
    let mut out: BTreeMap<RelationType, Tensor> = g
        .schema
        .relations
        .iter()
        .map(|r| (r.clone(), Tensor::zeros(n, n)))
        .collect();
    for e in &g.edges {
        let rel = RelationType::new(g.node_types[e.src].clone(), g.node_types[e.dst].clone());
        if let Some(a) = out.get_mut(&rel) {
            a.set(e.src, e.dst, 1.0);
        }
    }
    out
}

/// Relations shared by both schemas versus relations particular to each.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationPartition {
    pub common: BTreeSet<RelationType>,
    pub unique_a: BTreeSet<RelationType>,
    pub unique_b: BTreeSet<RelationType>,
}

impl RelationPartition {
    /// Relation families seen from graph A's side.
    pub fn side_a(&self) -> RelationContext {
        RelationContext {
            common: self.common.clone(),
            unique: self.unique_a.clone(),
        }
    }

    pub fn side_b(&self) -> RelationContext {
        RelationContext {
            common: self.common.clone(),
            unique: self.unique_b.clone(),
        }
    }
}

/// The common and unique relation sets that apply to one graph.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationContext {
    pub common: BTreeSet<RelationType>,
    pub unique: BTreeSet<RelationType>,
}

pub fn partition_relations(a: &Schema, b: &Schema) -> RelationPartition {
    let common: BTreeSet<_> = a.relations.intersection(&b.relations).cloned().collect();
    RelationPartition {
        unique_a: a.relations.difference(&common).cloned().collect(),
        unique_b: b.relations.difference(&common).cloned().collect(),
        common,
    }
}

/// Union of several schemas.
pub fn merge_schemas<'a>(schemas: impl IntoIterator<Item = &'a Schema>) -> Schema {
    let mut out = Schema::default();
    for s in schemas {
        out.node_types.extend(s.node_types.iter().cloned());
        out.edge_types.extend(s.edge_types.iter().cloned());
        out.relations.extend(s.relations.iter().cloned());
    }
    out
}

#[cfg(test)]
mod tests;
