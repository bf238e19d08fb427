use std::collections::{BTreeSet, HashSet};
use std::io::Write;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

const TYPES: [&str; 4] = ["A", "P", "S", "V"];

fn node(id: NodeId, ty: &str) -> NodeSpec {
    NodeSpec {
        id,
        node_type: ty.into(),
        features: vec![id as f64],
    }
}

/// Random typed graph without duplicate (src, dst) pairs.
fn random_graph(seed: u64, n: usize, p: f64) -> HeteroGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nodes: Vec<_> = (0..n as u64)
        .map(|i| node(i * 10 + 1, TYPES[rng.random_range(0..TYPES.len())]))
        .collect();
    let mut edges = Vec::new();
    for a in 0..n {
        for b in 0..n {
            if a != b && rng.random_bool(p) {
                edges.push((nodes[a].id, nodes[b].id, "e".to_string()));
            }
        }
    }
    HeteroGraph::build(nodes, edges, vec![], 1).unwrap()
}

fn bfs_oracle(g: &HeteroGraph, start: usize, depth: usize) -> BTreeSet<usize> {
    // level-synchronous expansion over raw edge list
    let mut seen = BTreeSet::from([start]);
    let mut frontier = vec![start];
    for _ in 0..depth {
        let mut next = Vec::new();
        for &v in &frontier {
            for e in g.edges() {
                let other = if e.src == v {
                    e.dst
                } else if e.dst == v {
                    e.src
                } else {
                    continue;
                };
                if seen.insert(other) {
                    next.push(other);
                }
            }
        }
        frontier = next;
    }
    seen
}

#[test]
fn single_edge_gives_single_relation() {
    let g = HeteroGraph::build(
        vec![node(1, "A"), node(2, "P")],
        vec![(1, 2, "writes".into())],
        vec![],
        1,
    )
    .unwrap();
    assert_eq!(g.schema().relations, BTreeSet::from([RelationType::new("A", "P")]));
    assert!(g.schema().is_heterogeneous());
}

#[test]
fn relation_adjacency_examples() {
    let g = HeteroGraph::build(
        vec![node(1, "A"), node(2, "A"), node(3, "P"), node(4, "S")],
        vec![(1, 3, "w".into()), (2, 3, "w".into())],
        vec![],
        1,
    )
    .unwrap();
    let adj = g.relation_adjacencies();
    let ap = &adj[&RelationType::new("A", "P")];
    assert_eq!(ap.sum(), 2.0);
    assert_eq!(ap.get(0, 2), 1.0);
    assert_eq!(ap.get(1, 2), 1.0);
    // a relation present in another graph's schema but not this one is all-zero
    let mut empty = Tensor::zeros(4, 4);
    if let Some(a) = adj.get(&RelationType::new("P", "S")) {
        empty = a.clone();
    }
    assert_eq!(empty.sum(), 0.0);
}

#[test]
fn relation_adjacency_matches_edge_scan() {
    for seed in 0..20 {
        let g = random_graph(seed, 10, 0.2);
        let adj = g.relation_adjacencies();
        for (rel, a) in &adj {
            for m in 0..10 {
                for n in 0..10 {
                    let expected = g
                        .edges()
                        .iter()
                        .any(|e| e.src == m && e.dst == n && g.node_type(m) == rel.src && g.node_type(n) == rel.dst);
                    assert_eq!(a.get(m, n) == 1.0, expected);
                }
            }
        }
        let ones: f64 = adj.values().map(Tensor::sum).sum();
        assert_eq!(ones as usize, g.num_edges());
    }
}

#[test]
fn khop_examples() {
    // path a - b - c - d
    let g = HeteroGraph::build(
        vec![node(1, "A"), node(2, "P"), node(3, "A"), node(4, "P")],
        vec![(1, 2, "x".into()), (3, 2, "x".into()), (3, 4, "x".into())],
        vec![],
        1,
    )
    .unwrap();
    let s = khop_subgraph(&g, 1, 2).unwrap();
    let ids: BTreeSet<_> = s.nodes.iter().map(|&i| g.node_id(i)).collect();
    assert_eq!(ids, BTreeSet::from([1, 2, 3]));
    assert_eq!(g.node_id(s.nodes[s.target_index]), 1);

    let lonely = HeteroGraph::build(vec![node(7, "A"), node(8, "P")], vec![], vec![], 1).unwrap();
    let s = khop_subgraph(&lonely, 7, 2).unwrap();
    assert_eq!(s.len(), 1);
    assert_eq!(s.union, Tensor::eye(1));

    assert!(matches!(khop_subgraph(&g, 99, 2), Err(GraphError::UnknownNode(99))));
}

#[test]
fn khop_matches_bfs_oracle() {
    for seed in 0..20 {
        let g = random_graph(100 + seed, 30, 0.04);
        for start in [0usize, 7, 19] {
            for depth in 0..4 {
                let s = khop_subgraph(&g, g.node_id(start), depth).unwrap();
                let got: BTreeSet<usize> = s.nodes.iter().copied().collect();
                assert_eq!(got, bfs_oracle(&g, start, depth), "seed {seed} start {start}");
            }
        }
    }
}

#[test]
fn subgraph_edges_map_to_parent_edges() {
    let g = random_graph(5, 25, 0.08);
    let parent: HashSet<(usize, usize)> = g.edges().iter().map(|e| (e.src, e.dst)).collect();
    let s = khop_subgraph(&g, g.node_id(3), 2).unwrap();
    for a in s.relations.values() {
        for i in 0..s.len() {
            for j in 0..s.len() {
                if a.get(i, j) == 1.0 {
                    assert!(parent.contains(&(s.nodes[i], s.nodes[j])));
                }
            }
        }
    }
    for i in 0..s.len() {
        assert_eq!(s.features.row(i), g.features().row(s.nodes[i]));
    }
}

#[test]
fn partition_example() {
    let schema = |rels: &[(&str, &str)]| Schema {
        node_types: rels.iter().flat_map(|(a, b)| [a.to_string(), b.to_string()]).collect(),
        edge_types: BTreeSet::from(["e".to_string()]),
        relations: rels.iter().map(|(a, b)| RelationType::new(*a, *b)).collect(),
    };
    let a = schema(&[("A", "P"), ("P", "S")]);
    let b = schema(&[("A", "P"), ("P", "V")]);
    let p = partition_relations(&a, &b);
    assert_eq!(p.common, BTreeSet::from([RelationType::new("A", "P")]));
    assert_eq!(p.unique_a, BTreeSet::from([RelationType::new("P", "S")]));
    assert_eq!(p.unique_b, BTreeSet::from([RelationType::new("P", "V")]));

    let same = partition_relations(&a, &a);
    assert!(same.unique_a.is_empty() && same.unique_b.is_empty());
}

fn random_schema(rng: &mut ChaCha8Rng) -> Schema {
    let mut s = Schema::default();
    for a in TYPES {
        for b in TYPES {
            if rng.random_bool(0.3) {
                s.node_types.insert(a.into());
                s.node_types.insert(b.into());
                s.relations.insert(RelationType::new(a, b));
            }
        }
    }
    s
}

#[test]
fn partition_matches_set_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..20 {
        let a = random_schema(&mut rng);
        let b = random_schema(&mut rng);
        let p = partition_relations(&a, &b);
        let mut common = BTreeSet::new();
        let mut only_a = BTreeSet::new();
        for r in &a.relations {
            if b.relations.iter().any(|x| x == r) {
                common.insert(r.clone());
            } else {
                only_a.insert(r.clone());
            }
        }
        let only_b: BTreeSet<_> = b
            .relations
            .iter()
            .filter(|r| !a.relations.iter().any(|x| x == *r))
            .cloned()
            .collect();
        assert_eq!(p.common, common);
        assert_eq!(p.unique_a, only_a);
        assert_eq!(p.unique_b, only_b);
        assert!(p.common.is_disjoint(&p.unique_a) && p.common.is_disjoint(&p.unique_b));
        let union_a: BTreeSet<_> = p.common.union(&p.unique_a).cloned().collect();
        assert_eq!(union_a, a.relations);

        let swapped = partition_relations(&b, &a);
        assert_eq!(swapped.common, p.common);
        assert_eq!(swapped.unique_a, p.unique_b);
        assert_eq!(swapped.unique_b, p.unique_a);
    }
}

fn write(dir: &std::path::Path, name: &str, body: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    let mut f = std::fs::File::create(&path).unwrap();
    f.write_all(body.as_bytes()).unwrap();
    path
}

#[test]
fn load_pads_features_and_rejects_bad_rows() {
    let dir = tempfile::tempdir().unwrap();
    let nodes = write(
        dir.path(),
        "nodes.csv",
        "node_id,node_type,feat_0,feat_1,feat_2\n1,A,0.5,1,2\n2,P,3,4,5\n",
    );
    let edges = write(dir.path(), "edges.csv", "src,dst,edge_type\n1,2,writes\n");
    let labels = write(dir.path(), "labels.csv", "node_id,class\n2,1\n");
    let g = load_graph(&nodes, &edges, &labels, 5).unwrap();
    assert_eq!(g.features().row(0), &[0.5, 1.0, 2.0, 0.0, 0.0]);
    assert_eq!(g.label(1), Some(1));
    assert_eq!(g.schema().relations.len(), 1);

    let truncated = load_graph(&nodes, &edges, &labels, 2).unwrap();
    assert_eq!(truncated.features().row(1), &[3.0, 4.0]);

    let bad_edges = write(dir.path(), "bad_edges.csv", "src,dst,edge_type\n1,2,w\n1,9,w\n");
    let err = load_graph(&nodes, &bad_edges, &labels, 3).unwrap_err();
    assert!(err.to_string().contains("row 2"), "{err}");

    let dup = write(dir.path(), "dup.csv", "node_id,node_type,feat_0\n1,A,0\n1,P,0\n");
    let err = load_graph(&dup, &edges, &labels, 1).unwrap_err();
    assert!(err.to_string().contains("duplicate"), "{err}");
}

#[test]
fn write_then_load_preserves_graph() {
    let g = random_graph(9, 12, 0.15);
    let dir = tempfile::tempdir().unwrap();
    write_graph(&g, dir.path()).unwrap();
    let back = load_graph(
        &dir.path().join("nodes.csv"),
        &dir.path().join("edges.csv"),
        &dir.path().join("labels.csv"),
        1,
    )
    .unwrap();
    assert_eq!(back.schema(), g.schema());
    assert_eq!(back.edges(), g.edges());
    assert_eq!(back.features(), g.features());
}

proptest! {
    #[test]
    fn khop_monotone_and_union_symmetric(seed in 0u64..500, start in 0usize..20) {
        let g = random_graph(seed, 20, 0.06);
        let mut previous: BTreeSet<usize> = BTreeSet::new();
        for k in 0..4 {
            let s = khop_subgraph(&g, g.node_id(start), k).unwrap();
            let set: BTreeSet<usize> = s.nodes.iter().copied().collect();
            prop_assert!(previous.is_subset(&set));
            previous = set;
            for i in 0..s.len() {
                prop_assert_eq!(s.union.get(i, i), 1.0);
                for j in 0..s.len() {
                    prop_assert_eq!(s.union.get(i, j), s.union.get(j, i));
                }
            }
        }
    }
}
