//! The synthetic I.I.D./OOD protocol: data generation, splits, episodic
//! training and evaluation for one method and one seed.
//!
//! Classes are divided into two disjoint groups: the lower half labels the
//! source graph used for meta-training, the upper half the target pair used
//! for meta-testing. Under OOD the source split comes from one environment
//! and the target splits from another, each cut by degree and stripped of
//! one non-target node type.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::episodes::{sample_tasks, split_tasks_in_pool, EpisodeSpec, Task};
use crate::hetgraph::{partition_relations, ClassId, HeteroGraph, RelationContext};
use crate::metalearn::{meta_test, meta_train, Embedder, EpisodeGraphs, GcnProtoNet, LossRecord, Metrics, TrainConfig};
use crate::oodgen::{gen_scm_graph, iid_split, make_two_env_splits, ScmConfig, SplitConfig, SplitMode};
use crate::vae_hgnn::{Ablation, CohfModel, ModelConfig};
use crate::{derive_seed, Error, Result};

const STREAM_SPLIT: u64 = 21;
const STREAM_TRAIN_TASKS: u64 = 22;
const STREAM_TEST_TASKS: u64 = 23;
const STREAM_MODEL: u64 = 24;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setting {
    Iid,
    Ood,
}

impl Setting {
    pub fn name(self) -> &'static str {
        match self {
            Setting::Iid => "iid",
            Setting::Ood => "ood",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    Cohf(Ablation),
    Baseline,
}

impl Method {
    pub fn name(self) -> String {
        match self {
            Method::Cohf(Ablation::None) => "cohf".into(),
            Method::Cohf(a) => format!("cohf-{a}"),
            Method::Baseline => "gcn-protonet".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub scm: ScmConfig,
    pub source_env: u64,
    pub target_env: u64,
    pub heterogeneity_drop: usize,
    pub episodes: EpisodeSpec,
    /// Meta-training tasks drawn from the source graph.
    pub train_tasks: usize,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        let mut scm = ScmConfig {
            n_classes: 6,
            d_inv: 4,
            ..ScmConfig::default()
        };
        scm.node_counts.insert(scm.target_type.clone(), 600);
        Self {
            scm,
            source_env: 0,
            target_env: 1,
            heterogeneity_drop: 1,
            episodes: EpisodeSpec {
                n_way: 2,
                k_shot: 1,
                q_query: 5,
                m_tasks: 100,
            },
            train_tasks: 100,
            model: ModelConfig {
                d: 16,
                n_att: 4,
                ..ModelConfig::default()
            },
            train: TrainConfig {
                epochs: 3,
                lr: 3e-3,
                ..TrainConfig::default()
            },
        }
    }
}

/// Lower and upper half of the class ids.
pub fn class_groups(n_classes: usize) -> (BTreeSet<ClassId>, BTreeSet<ClassId>) {
    let half = n_classes / 2;
    ((0..half).collect(), (half..n_classes).collect())
}

/// Graphs of one protocol instance.
#[derive(Clone, Debug)]
pub struct ProtocolData {
    pub source: HeteroGraph,
    pub support: HeteroGraph,
    pub query: HeteroGraph,
    pub source_classes: BTreeSet<ClassId>,
    pub target_classes: BTreeSet<ClassId>,
}

/// Relation families for meta-training and for both meta-test sides.
#[derive(Clone, Debug)]
pub struct Contexts {
    pub train: RelationContext,
    pub support: RelationContext,
    pub query: RelationContext,
}

impl ProtocolData {
    pub fn contexts(&self) -> Contexts {
        let test = partition_relations(self.support.schema(), self.query.schema());
        Contexts {
            train: partition_relations(self.source.schema(), self.query.schema()).side_a(),
            support: test.side_a(),
            query: test.side_b(),
        }
    }
}

fn scm_for(cfg: &ProtocolConfig, env_id: u64, seed: u64) -> ScmConfig {
    ScmConfig {
        env_id,
        seed,
        ..cfg.scm.clone()
    }
}

/// Generates the graphs of `setting` for data seed `seed`.
pub fn protocol_data(cfg: &ProtocolConfig, setting: Setting, seed: u64) -> Result<ProtocolData> {
    let (source_classes, target_classes) = class_groups(cfg.scm.n_classes);
    if source_classes.len() < cfg.episodes.n_way || target_classes.len() < cfg.episodes.n_way {
        return Err(Error::config(format!(
            "{} classes cannot be halved into groups of at least n_way = {}",
            cfg.scm.n_classes, cfg.episodes.n_way
        )));
    }
    let split_seed = derive_seed(seed, STREAM_SPLIT);
    let home = gen_scm_graph(&scm_for(cfg, cfg.source_env, seed))?.standardized();
    let (source, support, query) = match setting {
        Setting::Iid => {
            let s = iid_split(&home, split_seed)?;
            (s.source, s.support, s.query)
        }
        Setting::Ood => {
            let away = gen_scm_graph(&scm_for(cfg, cfg.target_env, seed))?.standardized();
            let reduce = SplitConfig {
                mode: SplitMode::DegreeCovariate,
                heterogeneity_drop: cfg.heterogeneity_drop,
                target_type: cfg.scm.target_type.clone(),
                seed: split_seed,
            };
            let s = make_two_env_splits(&home, &away, &reduce)?;
            (s.source, s.support, s.query)
        }
    };
    Ok(ProtocolData {
        source,
        support,
        query,
        source_classes,
        target_classes,
    })
}

/// Meta-training tasks on the source graph.
pub fn train_tasks(cfg: &ProtocolConfig, data: &ProtocolData, seed: u64) -> Result<Vec<Task>> {
    let spec = EpisodeSpec {
        m_tasks: cfg.train_tasks,
        ..cfg.episodes
    };
    Ok(sample_tasks(
        &data.source,
        &spec,
        &data.source_classes,
        derive_seed(seed, STREAM_TRAIN_TASKS),
    )?)
}

/// Meta-test tasks with support from `data.support` and queries from
/// `data.query`.
pub fn test_tasks(cfg: &ProtocolConfig, data: &ProtocolData, seed: u64) -> Result<Vec<Task>> {
    Ok(split_tasks_in_pool(
        &data.support,
        &data.query,
        &cfg.episodes,
        &data.target_classes,
        derive_seed(seed, STREAM_TEST_TASKS),
    )?)
}

/// Metrics and loss trace of one method on one protocol instance.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub metrics: Metrics,
    pub trace: Vec<LossRecord>,
}

/// Meta-trains `model` on `tasks` drawn from the source graph.
pub fn fit<E: Embedder>(
    model: &mut E,
    data: &ProtocolData,
    tasks: &[Task],
    train: &TrainConfig,
) -> Result<Vec<LossRecord>> {
    let ctx = data.contexts();
    meta_train(
        model,
        EpisodeGraphs::single(&data.source, &ctx.train),
        tasks,
        train,
        |_| {},
    )
}

/// Meta-tests `model` on `tasks` over the support/query pair.
pub fn score<E: Embedder>(model: &E, data: &ProtocolData, tasks: &[Task], train: &TrainConfig) -> Result<Metrics> {
    let ctx = data.contexts();
    let graphs = EpisodeGraphs {
        support: &data.support,
        support_ctx: &ctx.support,
        query: &data.query,
        query_ctx: &ctx.query,
    };
    meta_test(model, graphs, tasks, train)
}

/// Training configuration of `method` under `seed`.
pub fn method_train_config(cfg: &ProtocolConfig, method: Method, seed: u64) -> TrainConfig {
    let ablation = match method {
        Method::Cohf(a) => a,
        Method::Baseline => Ablation::None,
    };
    TrainConfig {
        seed,
        ablation,
        ..cfg.train.clone()
    }
}

/// Model initialisation seed of a run.
pub fn model_seed(seed: u64) -> u64 {
    derive_seed(seed, STREAM_MODEL)
}

fn fit_and_score<E: Embedder>(
    mut model: E,
    cfg: &ProtocolConfig,
    data: &ProtocolData,
    train: &TrainConfig,
) -> Result<RunOutcome> {
    let tasks = train_tasks(cfg, data, train.seed)?;
    let trace = fit(&mut model, data, &tasks, train)?;
    let tests = test_tasks(cfg, data, train.seed)?;
    let metrics = score(&model, data, &tests, train)?;
    Ok(RunOutcome { metrics, trace })
}

/// Trains `method` on the source tasks and evaluates it on the target
/// tasks. Model initialisation and sampling derive from `seed`.
pub fn run_method(cfg: &ProtocolConfig, data: &ProtocolData, method: Method, seed: u64) -> Result<RunOutcome> {
    let train = method_train_config(cfg, method, seed);
    let d_in = data.source.feature_dim();
    match method {
        Method::Cohf(_) => {
            let model = CohfModel::new(cfg.model.clone(), d_in, model_seed(seed))?;
            fit_and_score(model, cfg, data, &train)
        }
        Method::Baseline => {
            let model = GcnProtoNet::new(d_in, cfg.model.d, cfg.model.n_k, model_seed(seed))?;
            fit_and_score(model, cfg, data, &train)
        }
    }
}

/// Relative accuracy drop from I.I.D. to OOD, in percent.
pub fn drop_percent(iid: f64, ood: f64) -> f64 {
    (iid - ood) / iid * 100.0
}
