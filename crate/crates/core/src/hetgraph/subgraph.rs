use std::collections::{BTreeMap, VecDeque};

use super::{GraphError, HeteroGraph, NodeId, RelationType};
use crate::numcore::Tensor;

/// The `n_k`-hop neighbourhood of a target node, in local indexing.
#[derive(Clone, Debug)]
pub struct Subgraph {
    /// Parent-graph indices in local order; the target comes first.
    pub nodes: Vec<usize>,
    pub target_index: usize,
    /// Directed local adjacency for every relation of the parent schema.
    pub relations: BTreeMap<RelationType, Tensor>,
    /// Any-relation adjacency, symmetrised, with unit diagonal.
    pub union: Tensor,
    pub features: Tensor,
}

impl Subgraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn relation(&self, r: &RelationType) -> Option<&Tensor> {
        self.relations.get(r)
    }

    /// Undirected view of one relation: `A | A^T`.
    pub fn symmetric_relation(&self, r: &RelationType) -> Option<Tensor> {
        self.relations
            .get(r)
            .map(|a| Tensor::from_fn(a.rows(), a.cols(), |i, j| a.get(i, j).max(a.get(j, i))))
    }
}

/// Nodes within `n_k` undirected hops of `v_t` (inclusive) and the edges
/// among them.
pub fn khop_subgraph(g: &HeteroGraph, v_t: NodeId, n_k: usize) -> Result<Subgraph, GraphError> {
    let target = g.index_of(v_t).ok_or(GraphError::UnknownNode(v_t))?;
    Ok(khop_by_index(g, target, n_k))
}

pub(crate) fn khop_by_index(g: &HeteroGraph, target: usize, n_k: usize) -> Subgraph {
    let mut local = vec![usize::MAX; g.num_nodes()];
    let mut nodes = vec![target];
    local[target] = 0;
    let mut queue = VecDeque::from([(target, 0usize)]);
    while let Some((v, depth)) = queue.pop_front() {
        if depth == n_k {
            continue;
        }
        for &w in g.neighbors(v) {
            if local[w] == usize::MAX {
                local[w] = nodes.len();
                nodes.push(w);
                queue.push_back((w, depth + 1));
            }
        }
    }

    let n = nodes.len();
    let mut relations: BTreeMap<RelationType, Tensor> = g
        .schema()
        .relations
        .iter()
        .map(|r| (r.clone(), Tensor::zeros(n, n)))
        .collect();
    let mut union = Tensor::eye(n);
    for (li, &v) in nodes.iter().enumerate() {
        for e in g.out_edges(v) {
            let lj = local[e.dst];
            if lj == usize::MAX {
                continue;
            }
            let rel = RelationType::new(g.node_type(e.src), g.node_type(e.dst));
            if let Some(a) = relations.get_mut(&rel) {
                a.set(li, lj, 1.0);
            }
            union.set(li, lj, 1.0);
            union.set(lj, li, 1.0);
        }
    }
    let d = g.feature_dim();
    let features = Tensor::from_fn(n, d, |i, k| g.features().get(nodes[i], k));
    Subgraph {
        nodes,
        target_index: 0,
        relations,
        union,
        features,
    }
}
