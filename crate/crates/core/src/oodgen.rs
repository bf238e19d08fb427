//! I.I.D. and degree-covariate splits, heterogeneity reduction, and a seeded
//! structural-causal generator for synthetic heterogeneous graphs.
//!
//! In the generator every node carries an environment block `e1` and an
//! invariant block `e2`. Labels of target nodes are a fixed function of `e2`
//! and of the invariant wiring, so two graphs generated with the same seeds
//! but different `env_id` share their labels while their `e1` features and
//! environment-dependent edges differ.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::hetgraph::{ClassId, HeteroGraph, NodeId, NodeSpec};
use crate::{derive_seed, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    Iid,
    DegreeCovariate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub mode: SplitMode,
    /// Non-target node types removed from each split.
    pub heterogeneity_drop: usize,
    pub target_type: String,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            mode: SplitMode::DegreeCovariate,
            heterogeneity_drop: 1,
            target_type: "M".into(),
            seed: 0,
        }
    }
}

/// Three graphs produced by a split. `source` holds the meta-training
/// classes; `support` and `query` form the meta-test pair.
#[derive(Clone, Debug)]
pub struct Splits {
    pub source: HeteroGraph,
    pub support: HeteroGraph,
    pub query: HeteroGraph,
}

fn split_by_groups(g: &HeteroGraph, groups: [Vec<usize>; 3]) -> Splits {
    let labelled_types: BTreeSet<&str> = g.labels().map(|(i, _)| g.node_type(i)).collect();
    let shared: Vec<bool> = (0..g.num_nodes())
        .map(|i| !labelled_types.contains(g.node_type(i)))
        .collect();
    let [a, b, c] = groups.map(|group| {
        let mut keep = shared.clone();
        for i in group {
            keep[i] = true;
        }
        g.induced(&keep)
    });
    Splits {
        source: a,
        support: b,
        query: c,
    }
}

fn tertiles(order: Vec<usize>) -> [Vec<usize>; 3] {
    let n = order.len();
    let (b1, b2) = (n / 3, 2 * n / 3);
    [order[..b1].to_vec(), order[b1..b2].to_vec(), order[b2..].to_vec()]
}

/// Random partition of the labelled nodes into three near-equal groups.
/// Each split keeps its group plus every node of an unlabelled type.
pub fn iid_split(g: &HeteroGraph, seed: u64) -> Result<Splits> {
    let mut labelled: Vec<usize> = g.labels().map(|(i, _)| i).collect();
    if labelled.len() < 3 {
        return Err(Error::config("iid_split needs at least 3 labelled nodes"));
    }
    labelled.shuffle(&mut crate::rng(seed));
    let n = labelled.len();
    let mut groups: [Vec<usize>; 3] = Default::default();
    for (k, i) in labelled.into_iter().enumerate() {
        groups[k * 3 / n].push(i);
    }
    Ok(split_by_groups(g, groups))
}

/// Labelled nodes ordered by total degree (ties by node id) and cut into
/// tertiles: low degree to `source`, middle to `support`, high to `query`.
pub fn degree_covariate_split(g: &HeteroGraph, _seed: u64) -> Result<Splits> {
    let mut labelled: Vec<usize> = g.labels().map(|(i, _)| i).collect();
    if labelled.len() < 3 {
        return Err(Error::config("degree_covariate_split needs at least 3 labelled nodes"));
    }
    labelled.sort_by_key(|&i| (g.degree(i), g.node_id(i)));
    Ok(split_by_groups(g, tertiles(labelled)))
}

/// Removes `cfg.heterogeneity_drop` randomly chosen non-target node types
/// and their incident edges.
pub fn reduce_heterogeneity(g: &HeteroGraph, cfg: &SplitConfig, seed: u64) -> Result<HeteroGraph> {
    let candidates: Vec<&String> = g
        .schema()
        .node_types
        .iter()
        .filter(|t| **t != cfg.target_type)
        .collect();
    if cfg.heterogeneity_drop == 0 {
        return Ok(g.clone());
    }
    if cfg.heterogeneity_drop >= candidates.len() {
        return Err(Error::config(format!(
            "heterogeneity_drop = {} but only {} non-target node types exist",
            cfg.heterogeneity_drop,
            candidates.len()
        )));
    }
    let dropped: BTreeSet<&str> = candidates
        .choose_multiple(&mut crate::rng(seed), cfg.heterogeneity_drop)
        .map(|t| t.as_str())
        .collect();
    let keep: Vec<bool> = (0..g.num_nodes()).map(|i| !dropped.contains(g.node_type(i))).collect();
    Ok(g.induced(&keep))
}

/// Applies `cfg.mode` then reduces heterogeneity in each split with its own
/// derived seed.
pub fn make_splits(g: &HeteroGraph, cfg: &SplitConfig) -> Result<Splits> {
    let s = match cfg.mode {
        SplitMode::Iid => iid_split(g, cfg.seed)?,
        SplitMode::DegreeCovariate => degree_covariate_split(g, cfg.seed)?,
    };
    Ok(Splits {
        source: reduce_heterogeneity(&s.source, cfg, derive_seed(cfg.seed, 1))?,
        support: reduce_heterogeneity(&s.support, cfg, derive_seed(cfg.seed, 2))?,
        query: reduce_heterogeneity(&s.query, cfg, derive_seed(cfg.seed, 3))?,
    })
}

/// Splits two environments: `source` comes from `home` and the
/// `support`/`query` pair from `away`, both cut by `cfg.mode`, then each
/// split is reduced as in [`make_splits`].
pub fn make_two_env_splits(home: &HeteroGraph, away: &HeteroGraph, cfg: &SplitConfig) -> Result<Splits> {
    let cut = |g: &HeteroGraph| match cfg.mode {
        SplitMode::Iid => iid_split(g, cfg.seed),
        SplitMode::DegreeCovariate => degree_covariate_split(g, cfg.seed),
    };
    let a = cut(home)?;
    let b = cut(away)?;
    Ok(Splits {
        source: reduce_heterogeneity(&a.source, cfg, derive_seed(cfg.seed, 1))?,
        support: reduce_heterogeneity(&b.support, cfg, derive_seed(cfg.seed, 2))?,
        query: reduce_heterogeneity(&b.query, cfg, derive_seed(cfg.seed, 3))?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScmConfig {
    pub target_type: String,
    pub node_counts: BTreeMap<String, usize>,
    /// Types wired to target nodes by `e2` similarity.
    pub invariant_types: Vec<String>,
    /// Types wired to target nodes by `e1` similarity.
    pub env_types: Vec<String>,
    pub d_env: usize,
    pub d_inv: usize,
    pub n_classes: usize,
    pub label_seed: u64,
    /// Seed of node noise and invariant wiring.
    pub seed: u64,
    pub env_id: u64,
    /// Standard deviation of the per-environment offset of `e1`.
    pub env_offset_scale: f64,
    pub env_density: f64,
    pub inv_density: f64,
    /// Weight of the invariant-degree term in the label rule.
    pub structure_weight: f64,
    /// Distance of the `e2` cluster centres from the origin. Every node
    /// draws `e2` around one of `n_classes` centres along the label-rule
    /// directions; zero gives plain standard normal `e2`.
    pub cluster_scale: f64,
}

impl Default for ScmConfig {
    fn default() -> Self {
        Self {
            target_type: "M".into(),
            node_counts: BTreeMap::from([("M".into(), 300), ("D".into(), 60), ("A".into(), 80), ("T".into(), 80)]),
            invariant_types: vec!["D".into()],
            env_types: vec!["A".into(), "T".into()],
            d_env: 8,
            d_inv: 8,
            n_classes: 4,
            label_seed: 7,
            seed: 0,
            env_id: 0,
            env_offset_scale: 2.0,
            env_density: 0.04,
            inv_density: 0.05,
            structure_weight: 0.5,
            cluster_scale: 2.0,
        }
    }
}

impl ScmConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("env_density", self.env_density), ("inv_density", self.inv_density)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        if self.n_classes < 2 {
            return Err(Error::config("n_classes must be >= 2"));
        }
        if !self.node_counts.contains_key(&self.target_type) {
            return Err(Error::config(format!(
                "node_counts has no entry for target type {}",
                self.target_type
            )));
        }
        for t in self.invariant_types.iter().chain(&self.env_types) {
            if !self.node_counts.contains_key(t) {
                return Err(Error::config(format!("node_counts has no entry for type {t}")));
            }
            if *t == self.target_type {
                return Err(Error::config("the target type cannot be a wired neighbour type"));
            }
        }
        if self.env_offset_scale < 0.0 || self.structure_weight < 0.0 || self.cluster_scale < 0.0 {
            return Err(Error::config(
                "env_offset_scale, structure_weight and cluster_scale must be >= 0",
            ));
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        self.d_env + self.d_inv
    }
}

// Stream labels for derive_seed.
const STREAM_E2: u64 = 11;
const STREAM_E1: u64 = 12;
const STREAM_INV_EDGES: u64 = 13;
const STREAM_ENV_EDGES: u64 = 14;
const STREAM_ENV_OFFSET: u64 = 15;
const STREAM_LABEL_TIES: u64 = 16;

/// The fixed offset of environment `env_id`, drawn from `N(0, scale^2 I)`.
pub fn env_offset(env_id: u64, d_env: usize, scale: f64) -> Vec<f64> {
    let mut rng = crate::rng(derive_seed(STREAM_ENV_OFFSET, env_id));
    (0..d_env)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn wire_probability(density: f64, a: &[f64], b: &[f64]) -> f64 {
    let s = (1.0 + cosine(a, b)) / 2.0;
    density * s * s
}

/// Node ids are assigned type by type in `node_counts` order, starting at 1.
pub fn gen_scm_graph(cfg: &ScmConfig) -> Result<HeteroGraph> {
    cfg.validate()?;
    let (rule, bias) = label_rule(cfg);
    let mut e2_rng = crate::rng(derive_seed(cfg.seed, STREAM_E2));
    let mut e1_rng = crate::rng(derive_seed(derive_seed(cfg.seed, STREAM_E1), cfg.env_id));
    let offset = env_offset(cfg.env_id, cfg.d_env, cfg.env_offset_scale);

    let mut ids_by_type: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    let mut types = Vec::new();
    let mut e1: Vec<Vec<f64>> = Vec::new();
    let mut e2: Vec<Vec<f64>> = Vec::new();
    for (ty, &count) in &cfg.node_counts {
        for _ in 0..count {
            ids_by_type.entry(ty).or_default().push(types.len());
            types.push(ty.clone());
            let centre = if cfg.cluster_scale > 0.0 {
                rule[e2_rng.random_range(0..cfg.n_classes)].clone()
            } else {
                vec![0.0; cfg.d_inv]
            };
            e2.push(
                centre
                    .iter()
                    .map(|c| cfg.cluster_scale * c + e2_rng.sample::<f64, _>(StandardNormal))
                    .collect(),
            );
            e1.push(
                offset
                    .iter()
                    .map(|m| m + e1_rng.sample::<f64, _>(StandardNormal))
                    .collect(),
            );
        }
    }
    let targets = ids_by_type.get(cfg.target_type.as_str()).cloned().unwrap_or_default();

    let mut edges: Vec<(usize, usize, String)> = Vec::new();
    let mut inv_neighbours: Vec<Vec<usize>> = vec![Vec::new(); types.len()];
    let mut inv_rng = crate::rng(derive_seed(cfg.seed, STREAM_INV_EDGES));
    for ty in &cfg.invariant_types {
        for &m in &targets {
            for &n in &ids_by_type[ty.as_str()] {
                if inv_rng.random_bool(wire_probability(cfg.inv_density, &e2[m], &e2[n])) {
                    edges.push((m, n, format!("{}-{}", cfg.target_type, ty)));
                    inv_neighbours[m].push(n);
                }
            }
        }
    }
    let mut env_rng = crate::rng(derive_seed(derive_seed(cfg.seed, STREAM_ENV_EDGES), cfg.env_id));
    for ty in &cfg.env_types {
        for &m in &targets {
            for &n in &ids_by_type[ty.as_str()] {
                if env_rng.random_bool(wire_probability(cfg.env_density, &e1[m], &e1[n])) {
                    edges.push((m, n, format!("{}-{}", cfg.target_type, ty)));
                }
            }
        }
    }

    let labels = scm_labels(cfg, &rule, &bias, &targets, &e2, &inv_neighbours);

    let nodes = (0..types.len())
        .map(|i| NodeSpec {
            id: i as NodeId + 1,
            node_type: types[i].clone(),
            features: e1[i].iter().chain(&e2[i]).copied().collect(),
        })
        .collect();
    let edges = edges
        .into_iter()
        .map(|(a, b, t)| (a as NodeId + 1, b as NodeId + 1, t))
        .collect();
    let labels = targets.iter().zip(labels).map(|(&i, c)| (i as NodeId + 1, c)).collect();
    Ok(HeteroGraph::build(nodes, edges, labels, cfg.feature_dim())?)
}

/// Unit class directions `R_c` and structure coefficients `b_c`, fixed by
/// `label_seed`.
fn label_rule(cfg: &ScmConfig) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rule_rng = crate::rng(cfg.label_seed);
    let r = (0..cfg.n_classes)
        .map(|_| {
            let v: Vec<f64> = (0..cfg.d_inv).map(|_| rule_rng.sample(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                v.iter().map(|x| x / norm).collect()
            } else {
                v
            }
        })
        .collect();
    let b = (0..cfg.n_classes).map(|_| rule_rng.sample(StandardNormal)).collect();
    (r, b)
}

/// `argmax_c R_c . mean(e2 of node and invariant neighbours) + w b_c s(deg)`
/// where `s` is the centred log invariant degree. With `d_inv = 0` every
/// score ties and labels are drawn uniformly.
fn scm_labels(
    cfg: &ScmConfig,
    r: &[Vec<f64>],
    b: &[f64],
    targets: &[usize],
    e2: &[Vec<f64>],
    inv_neighbours: &[Vec<usize>],
) -> Vec<ClassId> {
    let mut tie_rng = crate::rng(derive_seed(cfg.label_seed, STREAM_LABEL_TIES));
    if cfg.d_inv == 0 {
        return targets.iter().map(|_| tie_rng.random_range(0..cfg.n_classes)).collect();
    }
    let log_deg: Vec<f64> = targets
        .iter()
        .map(|&m| (1.0 + inv_neighbours[m].len() as f64).ln())
        .collect();
    let mean_log_deg = log_deg.iter().sum::<f64>() / log_deg.len().max(1) as f64;
    targets
        .iter()
        .zip(&log_deg)
        .map(|(&m, &ld)| {
            let mut pooled = e2[m].clone();
            for &n in &inv_neighbours[m] {
                for (p, v) in pooled.iter_mut().zip(&e2[n]) {
                    *p += v;
                }
            }
            let count = (1 + inv_neighbours[m].len()) as f64;
            let scores = r.iter().zip(b).map(|(rc, bc)| {
                let lin: f64 = rc.iter().zip(&pooled).map(|(x, y)| x * y / count).sum();
                lin + cfg.structure_weight * bc * (ld - mean_log_deg)
            });
            argmax(scores)
        })
        .collect()
}

/// Index of the largest value; ties resolve to the lowest index.
pub(crate) fn argmax(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.into_iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain_graph(degrees: &[usize]) -> HeteroGraph {
        // node k (1-based) gets `degrees[k-1]` private neighbours of type X
        let mut nodes = Vec::new();
        let mut edges = Vec::new();
        let mut labels = Vec::new();
        let mut next = 1000;
        for (k, &d) in degrees.iter().enumerate() {
            let id = k as NodeId + 1;
            nodes.push(NodeSpec {
                id,
                node_type: "M".into(),
                features: vec![],
            });
            labels.push((id, k % 2));
            for _ in 0..d {
                nodes.push(NodeSpec {
                    id: next,
                    node_type: "X".into(),
                    features: vec![],
                });
                edges.push((id, next, "mx".to_string()));
                next += 1;
            }
        }
        HeteroGraph::build(nodes, edges, labels, 1).unwrap()
    }

    fn labelled_ids(g: &HeteroGraph) -> BTreeSet<NodeId> {
        g.labels().map(|(i, _)| g.node_id(i)).collect()
    }

    #[test]
    fn degree_tertiles_follow_sort_oracle() {
        let g = chain_graph(&[5, 1, 9, 3, 7, 2, 8, 4, 6]);
        let s = degree_covariate_split(&g, 0).unwrap();
        let mut order: Vec<(usize, NodeId)> = (1..=9u64).map(|id| (g.degree(g.index_of(id).unwrap()), id)).collect();
        order.sort();
        let ids: Vec<NodeId> = order.iter().map(|p| p.1).collect();
        assert_eq!(labelled_ids(&s.source), ids[..3].iter().copied().collect());
        assert_eq!(labelled_ids(&s.support), ids[3..6].iter().copied().collect());
        assert_eq!(labelled_ids(&s.query), ids[6..].iter().copied().collect());
        assert_eq!(labelled_ids(&s.source), BTreeSet::from([2, 6, 4]));
    }

    #[test]
    fn equal_degrees_split_by_node_id() {
        let g = chain_graph(&[1; 6]);
        let s = degree_covariate_split(&g, 0).unwrap();
        assert_eq!(labelled_ids(&s.source), BTreeSet::from([1, 2]));
        assert_eq!(labelled_ids(&s.query), BTreeSet::from([5, 6]));
        let three = degree_covariate_split(&chain_graph(&[1, 1, 1]), 0).unwrap();
        assert_eq!(three.support.num_labeled(), 1);
    }

    #[test]
    fn iid_split_sizes() {
        for (n, expected) in [(9, vec![3, 3, 3]), (10, vec![3, 3, 4])] {
            let g = chain_graph(&vec![1; n]);
            let s = iid_split(&g, 5).unwrap();
            let mut sizes = vec![s.source.num_labeled(), s.support.num_labeled(), s.query.num_labeled()];
            sizes.sort();
            assert_eq!(sizes, expected);
            let again = iid_split(&g, 5).unwrap();
            assert_eq!(labelled_ids(&again.source), labelled_ids(&s.source));
        }
        assert!(iid_split(&chain_graph(&[1, 1]), 0).is_err());
    }

    #[test]
    fn splits_are_disjoint_and_exhaustive() {
        let g = gen_scm_graph(&ScmConfig::default()).unwrap();
        for s in [iid_split(&g, 3).unwrap(), degree_covariate_split(&g, 3).unwrap()] {
            let (a, b, c) = (
                labelled_ids(&s.source),
                labelled_ids(&s.support),
                labelled_ids(&s.query),
            );
            assert!(a.is_disjoint(&b) && a.is_disjoint(&c) && b.is_disjoint(&c));
            assert_eq!(a.len() + b.len() + c.len(), g.num_labeled());
            // non-target nodes are shared
            assert_eq!(s.source.num_nodes() - a.len(), g.num_nodes() - g.num_labeled());
        }
    }

    #[test]
    fn reduce_heterogeneity_rules() {
        let g = gen_scm_graph(&ScmConfig::default()).unwrap();
        let cfg = SplitConfig {
            heterogeneity_drop: 1,
            ..SplitConfig::default()
        };
        for seed in 0..100 {
            let r = reduce_heterogeneity(&g, &cfg, seed).unwrap();
            assert_eq!(r.schema().node_types.len(), 3);
            assert!(r.schema().node_types.contains("M"));
            assert!(r.schema().is_subschema_of(g.schema()));
            assert_eq!(r.num_labeled(), g.num_labeled());
        }
        let zero = SplitConfig {
            heterogeneity_drop: 0,
            ..cfg.clone()
        };
        let same = reduce_heterogeneity(&g, &zero, 1).unwrap();
        assert_eq!(same.edges(), g.edges());
        let too_many = SplitConfig {
            heterogeneity_drop: 3,
            ..cfg
        };
        assert!(reduce_heterogeneity(&g, &too_many, 1).is_err());
    }

    #[test]
    fn env_changes_e1_but_not_e2_or_labels() {
        let a = ScmConfig::default();
        let b = ScmConfig { env_id: 1, ..a.clone() };
        let (ga, gb) = (gen_scm_graph(&a).unwrap(), gen_scm_graph(&b).unwrap());
        let d_env = a.d_env;
        let mut e1_differs = false;
        for i in 0..ga.num_nodes() {
            assert_eq!(ga.features().row(i)[d_env..], gb.features().row(i)[d_env..]);
            e1_differs |= ga.features().row(i)[..d_env] != gb.features().row(i)[..d_env];
            assert_eq!(ga.label(i), gb.label(i));
        }
        assert!(e1_differs);
        assert_ne!(ga.edges(), gb.edges());
        let inv = |g: &HeteroGraph| -> Vec<(usize, usize)> {
            g.edges()
                .iter()
                .filter(|e| e.edge_type == "M-D")
                .map(|e| (e.src, e.dst))
                .collect()
        };
        assert_eq!(inv(&ga), inv(&gb));
    }

    #[test]
    fn labels_use_every_class() {
        let g = gen_scm_graph(&ScmConfig::default()).unwrap();
        let counts = g.nodes_by_class();
        assert_eq!(counts.len(), 4);
        assert!(
            counts.values().all(|v| v.len() >= 20),
            "{:?}",
            counts.values().map(Vec::len).collect::<Vec<_>>()
        );
    }

    /// Nearest class mean on features, fitted on half the labelled nodes.
    fn centroid_accuracy(g: &HeteroGraph) -> f64 {
        let labelled: Vec<(usize, ClassId)> = g.labels().collect();
        let (train, test) = labelled.split_at(labelled.len() / 2);
        let d = g.feature_dim();
        let mut sums: BTreeMap<ClassId, (Vec<f64>, f64)> = BTreeMap::new();
        for &(i, c) in train {
            let e = sums.entry(c).or_insert((vec![0.0; d], 0.0));
            for (s, v) in e.0.iter_mut().zip(g.features().row(i)) {
                *s += v;
            }
            e.1 += 1.0;
        }
        let correct = test
            .iter()
            .filter(|&&(i, c)| {
                let x = g.features().row(i);
                let best = sums
                    .iter()
                    .min_by(|a, b| {
                        let da: f64 = x.iter().zip(&a.1 .0).map(|(v, s)| (v - s / a.1 .1).powi(2)).sum();
                        let db: f64 = x.iter().zip(&b.1 .0).map(|(v, s)| (v - s / b.1 .1).powi(2)).sum();
                        da.total_cmp(&db)
                    })
                    .unwrap();
                *best.0 == c
            })
            .count();
        correct as f64 / test.len() as f64
    }

    #[test]
    fn degenerate_label_rule_is_at_chance() {
        let mut accs = Vec::new();
        for seed in 0..5 {
            let cfg = ScmConfig {
                d_inv: 0,
                seed,
                label_seed: 100 + seed,
                ..ScmConfig::default()
            };
            accs.push(centroid_accuracy(&gen_scm_graph(&cfg).unwrap()));
        }
        let mean = accs.iter().sum::<f64>() / 5.0;
        assert!((mean - 0.25).abs() <= 0.05, "{accs:?}");

        let informative = centroid_accuracy(&gen_scm_graph(&ScmConfig::default()).unwrap());
        assert!(informative > 0.4, "{informative}");
    }

    #[test]
    fn zero_offset_means_no_feature_shift() {
        let a = ScmConfig {
            env_offset_scale: 0.0,
            ..ScmConfig::default()
        };
        assert!(env_offset(0, 8, 0.0).iter().all(|&v| v == 0.0));
        assert_eq!(env_offset(3, 8, 2.0), env_offset(3, 8, 2.0));
        assert_ne!(env_offset(3, 8, 2.0), env_offset(4, 8, 2.0));
        let ga = gen_scm_graph(&a).unwrap();
        let gb = gen_scm_graph(&ScmConfig { env_id: 1, ..a }).unwrap();
        let mean = |g: &HeteroGraph| -> f64 {
            (0..g.num_nodes())
                .map(|i| g.features().row(i)[..8].iter().sum::<f64>())
                .sum::<f64>()
                / (8 * g.num_nodes()) as f64
        };
        assert!((mean(&ga) - mean(&gb)).abs() < 0.1);
    }

    #[test]
    fn config_validation() {
        let bad = ScmConfig {
            env_density: 1.5,
            ..ScmConfig::default()
        };
        assert!(gen_scm_graph(&bad).is_err());
        let missing = ScmConfig {
            env_types: vec!["Q".into()],
            ..ScmConfig::default()
        };
        assert!(missing.validate().is_err());
    }
}
