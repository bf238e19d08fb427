//! A seeded six-node graph and the finite-difference checks run on it.

use std::collections::BTreeSet;

use rand::Rng as _;

use crate::episodes::Task;
use crate::hetgraph::{HeteroGraph, NodeSpec, RelationContext, RelationType};
use crate::metalearn::{task_loss, EpisodeGraphs, TrainConfig};
use crate::numcore::gradcheck::{check_op_suite, check_params, GroupError};
use crate::numcore::NumError;
use crate::vae_hgnn::{CohfModel, ModelConfig};
use crate::Result;

pub const SIX_NODE_DIM: usize = 3;

/// Four labelled `M` nodes (two per class) joined through one `D` and one
/// `A` node. Features are uniform in [-1, 1), shifted by the class on the
/// first column.
pub fn six_node_graph(seed: u64) -> HeteroGraph {
    let mut rng = crate::rng(seed);
    let types = ["M", "M", "M", "M", "D", "A"];
    let nodes = types
        .iter()
        .enumerate()
        .map(|(i, t)| NodeSpec {
            id: i as u64 + 1,
            node_type: t.to_string(),
            features: (0..SIX_NODE_DIM)
                .map(|k| rng.random_range(-1.0..1.0) + if k == 0 && i < 4 { (i % 2) as f64 } else { 0.0 })
                .collect(),
        })
        .collect();
    let edges = vec![
        (1, 5, "md".into()),
        (2, 5, "md".into()),
        (3, 6, "ma".into()),
        (4, 6, "ma".into()),
        (1, 6, "ma".into()),
        (4, 5, "md".into()),
    ];
    let labels = vec![(1, 0), (2, 1), (3, 0), (4, 1)];
    HeteroGraph::build(nodes, edges, labels, SIX_NODE_DIM).expect("fixture is well formed")
}

/// `M-D` common, `M-A` unique.
pub fn six_node_context() -> RelationContext {
    RelationContext {
        common: BTreeSet::from([RelationType::new("M", "D")]),
        unique: BTreeSet::from([RelationType::new("M", "A")]),
    }
}

pub fn six_node_model_config() -> ModelConfig {
    ModelConfig {
        d: 4,
        n_att: 2,
        n_k: 1,
        ..ModelConfig::default()
    }
}

/// 2-way 1-shot task: nodes 1 and 2 support, 3 and 4 query.
pub fn six_node_task() -> Task {
    Task {
        classes: vec![0, 1],
        support: vec![(1, 0), (2, 1)],
        query: vec![(3, 0), (4, 1)],
    }
}

/// Finite-difference check of every numerical op on inputs drawn from
/// `seed`; rows are named `op`.
pub fn op_gradients(seed: u64) -> Result<Vec<GroupError>> {
    Ok(check_op_suite(seed)?)
}

/// Finite-difference check of `L_cls + L_str + lambda L_kl` with respect to
/// every parameter of a model initialised from `seed` on the six-node task.
pub fn end_to_end_gradients(seed: u64, lambda_kl: f64) -> Result<Vec<GroupError>> {
    let g = six_node_graph(seed);
    let ctx = six_node_context();
    let task = six_node_task();
    let cfg = TrainConfig {
        lambda_kl,
        seed,
        ..TrainConfig::default()
    };
    let model = CohfModel::new(six_node_model_config(), SIX_NODE_DIM, seed)?;
    let report = check_params(model.params(), |t, store| {
        let mut m = model.clone();
        *m.params_mut() = store.clone();
        let out = task_loss(
            t,
            &m,
            EpisodeGraphs::single(&g, &ctx),
            &task,
            0,
            &cfg,
            &mut crate::rng(seed),
        )
        .map_err(|e| NumError::Usage(e.to_string()))?;
        Ok(out.loss)
    })?;
    Ok(report)
}
