//! N-way K-shot episodic task construction.

use std::collections::BTreeSet;

use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hetgraph::{ClassId, HeteroGraph, NodeId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EpisodeError {
    #[error("invalid episode spec: {0}")]
    Spec(String),
    #[error("need {need} classes, pool has {have}")]
    TooFewClasses { need: usize, have: usize },
    #[error("class {class} has {have} labelled nodes in {graph}, needs {need}")]
    TooFewNodes {
        class: ClassId,
        graph: &'static str,
        have: usize,
        need: usize,
    },
    #[error("class {class} is absent from {graph}")]
    MissingClass { class: ClassId, graph: &'static str },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub n_way: usize,
    pub k_shot: usize,
    pub q_query: usize,
    pub m_tasks: usize,
}

impl EpisodeSpec {
    /// `q_query` defaults to `k_shot`.
    pub fn new(n_way: usize, k_shot: usize, m_tasks: usize) -> Self {
        Self {
            n_way,
            k_shot,
            q_query: k_shot,
            m_tasks,
        }
    }

    pub fn validate(&self) -> Result<(), EpisodeError> {
        if self.n_way < 2 {
            return Err(EpisodeError::Spec(format!("n_way must be >= 2, got {}", self.n_way)));
        }
        if self.k_shot < 1 || self.q_query < 1 {
            return Err(EpisodeError::Spec("k_shot and q_query must be >= 1".into()));
        }
        Ok(())
    }
}

/// One episode. Support and query entries are external node ids.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub classes: Vec<ClassId>,
    pub support: Vec<(NodeId, ClassId)>,
    pub query: Vec<(NodeId, ClassId)>,
}

impl Task {
    /// Position of `class` in this task's class list.
    pub fn class_slot(&self, class: ClassId) -> Option<usize> {
        self.classes.iter().position(|&c| c == class)
    }
}

/// Draws tasks whose support and query sets come from the same graph.
pub fn sample_tasks(
    g: &HeteroGraph,
    spec: &EpisodeSpec,
    class_pool: &BTreeSet<ClassId>,
    seed: u64,
) -> Result<Vec<Task>, EpisodeError> {
    spec.validate()?;
    let by_class = g.nodes_by_class();
    let need = spec.k_shot + spec.q_query;
    let mut pool = Vec::with_capacity(class_pool.len());
    for &c in class_pool {
        let have = by_class.get(&c).map_or(0, Vec::len);
        if have < need {
            return Err(EpisodeError::TooFewNodes {
                class: c,
                graph: "graph",
                have,
                need,
            });
        }
        pool.push(c);
    }
    if pool.len() < spec.n_way {
        return Err(EpisodeError::TooFewClasses {
            need: spec.n_way,
            have: pool.len(),
        });
    }
    let mut rng = crate::rng(seed);
    let mut tasks = Vec::with_capacity(spec.m_tasks);
    for _ in 0..spec.m_tasks {
        let classes: Vec<ClassId> = pool.choose_multiple(&mut rng, spec.n_way).copied().collect();
        let mut support = Vec::with_capacity(spec.n_way * spec.k_shot);
        let mut query = Vec::with_capacity(spec.n_way * spec.q_query);
        for &c in &classes {
            let picked: Vec<usize> = by_class[&c].choose_multiple(&mut rng, need).copied().collect();
            support.extend(picked[..spec.k_shot].iter().map(|&i| (g.node_id(i), c)));
            query.extend(picked[spec.k_shot..].iter().map(|&i| (g.node_id(i), c)));
        }
        tasks.push(Task {
            classes,
            support,
            query,
        });
    }
    Ok(tasks)
}

/// Draws tasks with support nodes from `g_tr` and query nodes from `g_te`.
/// The class pool is every class labelled in either graph.
pub fn split_tasks(
    g_tr: &HeteroGraph,
    g_te: &HeteroGraph,
    spec: &EpisodeSpec,
    seed: u64,
) -> Result<Vec<Task>, EpisodeError> {
    let pool: BTreeSet<ClassId> = g_tr.classes().union(&g_te.classes()).copied().collect();
    split_tasks_in_pool(g_tr, g_te, spec, &pool, seed)
}

pub fn split_tasks_in_pool(
    g_tr: &HeteroGraph,
    g_te: &HeteroGraph,
    spec: &EpisodeSpec,
    class_pool: &BTreeSet<ClassId>,
    seed: u64,
) -> Result<Vec<Task>, EpisodeError> {
    spec.validate()?;
    let tr = g_tr.nodes_by_class();
    let te = g_te.nodes_by_class();
    for &c in class_pool {
        for (graph, groups, need) in [("g_tr", &tr, spec.k_shot), ("g_te", &te, spec.q_query)] {
            match groups.get(&c) {
                None => return Err(EpisodeError::MissingClass { class: c, graph }),
                Some(v) if v.len() < need => {
                    return Err(EpisodeError::TooFewNodes {
                        class: c,
                        graph,
                        have: v.len(),
                        need,
                    })
                }
                Some(_) => {}
            }
        }
    }
    let pool: Vec<ClassId> = class_pool.iter().copied().collect();
    if pool.len() < spec.n_way {
        return Err(EpisodeError::TooFewClasses {
            need: spec.n_way,
            have: pool.len(),
        });
    }
    let mut rng = crate::rng(seed);
    let mut tasks = Vec::with_capacity(spec.m_tasks);
    for _ in 0..spec.m_tasks {
        let mut classes = pool.clone();
        classes.shuffle(&mut rng);
        classes.truncate(spec.n_way);
        let mut support = Vec::new();
        let mut query = Vec::new();
        for &c in &classes {
            support.extend(
                tr[&c]
                    .choose_multiple(&mut rng, spec.k_shot)
                    .map(|&i| (g_tr.node_id(i), c)),
            );
            query.extend(
                te[&c]
                    .choose_multiple(&mut rng, spec.q_query)
                    .map(|&i| (g_te.node_id(i), c)),
            );
        }
        tasks.push(Task {
            classes,
            support,
            query,
        });
    }
    Ok(tasks)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::hetgraph::NodeSpec;

    fn labelled(labels: &[(NodeId, ClassId)]) -> HeteroGraph {
        let mut nodes: Vec<NodeSpec> = labels
            .iter()
            .map(|&(id, _)| NodeSpec {
                id,
                node_type: "M".into(),
                features: vec![],
            })
            .collect();
        nodes.push(NodeSpec {
            id: 10_000,
            node_type: "D".into(),
            features: vec![],
        });
        HeteroGraph::build(nodes, vec![], labels.to_vec(), 1).unwrap()
    }

    fn balanced(classes: usize, per: usize, offset: u64) -> HeteroGraph {
        let labels: Vec<_> = (0..classes * per).map(|i| (offset + i as u64, i % classes)).collect();
        labelled(&labels)
    }

    fn check_balance(task: &Task, spec: &EpisodeSpec) {
        assert_eq!(task.classes.len(), spec.n_way);
        let mut s: BTreeMap<ClassId, usize> = BTreeMap::new();
        let mut q: BTreeMap<ClassId, usize> = BTreeMap::new();
        for &(_, c) in &task.support {
            *s.entry(c).or_default() += 1;
        }
        for &(_, c) in &task.query {
            *q.entry(c).or_default() += 1;
        }
        for c in &task.classes {
            assert_eq!(s[c], spec.k_shot);
            assert_eq!(q[c], spec.q_query);
        }
    }

    #[test]
    fn forced_two_way_one_shot() {
        let g = labelled(&[(1, 0), (2, 0), (3, 1), (4, 1)]);
        let spec = EpisodeSpec::new(2, 1, 5);
        let tasks = sample_tasks(&g, &spec, &BTreeSet::from([0, 1]), 3).unwrap();
        for t in &tasks {
            assert_eq!(t.support.len(), 2);
            assert_eq!(t.query.len(), 2);
            let s: BTreeSet<_> = t.support.iter().map(|p| p.0).collect();
            assert!(t.query.iter().all(|p| !s.contains(&p.0)));
            check_balance(t, &spec);
        }
    }

    #[test]
    fn same_seed_same_tasks() {
        let g = balanced(5, 8, 0);
        let spec = EpisodeSpec::new(3, 2, 20);
        let pool: BTreeSet<_> = (0..5).collect();
        assert_eq!(
            sample_tasks(&g, &spec, &pool, 11).unwrap(),
            sample_tasks(&g, &spec, &pool, 11).unwrap()
        );
        assert_ne!(
            sample_tasks(&g, &spec, &pool, 11).unwrap(),
            sample_tasks(&g, &spec, &pool, 12).unwrap()
        );
    }

    #[test]
    fn deficient_class_is_named() {
        // class 1 has K + q - 1 = 3 nodes
        let g = labelled(&[(1, 0), (2, 0), (3, 0), (4, 0), (5, 1), (6, 1), (7, 1)]);
        let spec = EpisodeSpec::new(2, 2, 1);
        let err = sample_tasks(&g, &spec, &BTreeSet::from([0, 1]), 0).unwrap_err();
        assert!(matches!(err, EpisodeError::TooFewNodes { class: 1, .. }), "{err}");
        assert!(sample_tasks(&g, &EpisodeSpec::new(2, 1, 1), &BTreeSet::from([0]), 0).is_err());
    }

    #[test]
    fn split_tasks_provenance_and_counts() {
        let tr = balanced(2, 6, 0);
        let te = balanced(2, 6, 500);
        let spec = EpisodeSpec::new(2, 3, 100);
        let tasks = split_tasks(&tr, &te, &spec, 4).unwrap();
        let support_refs: usize = tasks.iter().map(|t| t.support.len()).sum();
        assert_eq!(support_refs, 600);
        for t in &tasks {
            assert!(t.support.iter().all(|&(id, _)| tr.index_of(id).is_some()));
            assert!(t.query.iter().all(|&(id, _)| te.index_of(id).is_some()));
            check_balance(t, &spec);
        }
    }

    #[test]
    fn split_tasks_rejects_one_sided_class() {
        let tr = labelled(&[(1, 0), (2, 1), (3, 2)]);
        let te = labelled(&[(11, 0), (12, 1)]);
        let err = split_tasks(&tr, &te, &EpisodeSpec::new(2, 1, 1), 0).unwrap_err();
        assert_eq!(
            err,
            EpisodeError::MissingClass {
                class: 2,
                graph: "g_te"
            }
        );
    }

    #[test]
    fn spec_validation() {
        assert!(EpisodeSpec::new(1, 1, 1).validate().is_err());
        assert!(EpisodeSpec::new(2, 0, 1).validate().is_err());
        assert!(EpisodeSpec::new(2, 1, 1).validate().is_ok());
    }
}
