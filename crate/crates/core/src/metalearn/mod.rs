//! Node valuator, prototypical classification and the episodic loops.
//!
//! Every task node is embedded through its own k-hop subgraph. Support
//! nodes come from the training graph, query nodes from the test graph; at
//! meta-training time both sides are the source graph.

mod baseline;
pub mod valuator;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::episodes::Task;
use crate::hetgraph::{khop_subgraph, ClassId, HeteroGraph, RelationContext, Subgraph};
use crate::numcore::{Adam, AdamConfig, Axis, ParamStore, Tape, Tensor, Var};
use crate::vae_hgnn::{Ablation, CohfModel};
use crate::{derive_seed, Error, Result};

pub use baseline::GcnProtoNet;
pub use valuator::RichnessScore;

const EVAL_STREAM: u64 = 0x7e57;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lambda_kl: f64,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub ablation: Ablation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_kl: 0.4,
            epochs: 1,
            lr: 5e-3,
            seed: 0,
            ablation: Ablation::None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_kl >= 0.0 && self.lambda_kl.is_finite()) {
            return Err(Error::config(format!("lambda_kl must be >= 0, got {}", self.lambda_kl)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("lr must be > 0, got {}", self.lr)));
        }
        Ok(())
    }
}

/// A class prototype with the weights of its support nodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prototype {
    pub class: ClassId,
    pub vector: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Embedding of one task node.
#[derive(Clone, Debug)]
pub struct NodeEmbedding {
    /// `1 x D`.
    pub h: Var,
    /// Richness score; `None` asks for uniform prototype weights.
    pub score: Option<Var>,
    pub l_str: Var,
    pub l_kl: Var,
    /// Attention values recorded for inspection, with the axis along which
    /// each one is normalised.
    pub attention: Vec<(Var, Axis)>,
}

/// A network that embeds the target node of a subgraph.
pub trait Embedder: Clone + Send + Sync {
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
    /// Hop count of the subgraph around each task node.
    fn hops(&self) -> usize;
    fn embed(
        &self,
        tape: &mut Tape,
        sub: &Subgraph,
        ctx: &RelationContext,
        ablation: Ablation,
        support: bool,
        rng: &mut crate::Rng,
    ) -> Result<NodeEmbedding>;
}

impl Embedder for CohfModel {
    fn params(&self) -> &ParamStore {
        CohfModel::params(self)
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        CohfModel::params_mut(self)
    }

    fn hops(&self) -> usize {
        self.config().n_k
    }

    fn embed(
        &self,
        tape: &mut Tape,
        sub: &Subgraph,
        ctx: &RelationContext,
        ablation: Ablation,
        support: bool,
        rng: &mut crate::Rng,
    ) -> Result<NodeEmbedding> {
        let f = self.forward(tape, sub, ctx, ablation, rng)?;
        let h = tape.rows(f.h, &[f.target])?;
        let mut attention = vec![(f.alpha_c, Axis::Cols)];
        attention.extend(f.alpha_u.map(|a| (a, Axis::Cols)));
        let score = if support && ablation != Ablation::Mvalue {
            let v = self.valuator_vars(tape);
            let rsl = valuator::richness_structure(tape, f.a_z1, self.config().l, f.a_z2)?;
            let (rnl, gamma) = valuator::richness_node(tape, v, f.h_z1, f.h_z2, f.a_z2, f.target)?;
            attention.extend(gamma.map(|g| (g, Axis::Rows)));
            Some(tape.add(rsl, rnl)?)
        } else {
            None
        };
        Ok(NodeEmbedding {
            h,
            score,
            l_str: f.l_str,
            l_kl: f.l_kl,
            attention,
        })
    }
}

/// Richness score of the target of a subgraph under a frozen model.
pub fn richness_score(
    model: &CohfModel,
    sub: &Subgraph,
    ctx: &RelationContext,
    rng: &mut crate::Rng,
) -> Result<RichnessScore> {
    let mut tape = Tape::inference();
    let f = model.forward(&mut tape, sub, ctx, Ablation::None, rng)?;
    let v = model.valuator_vars(&mut tape);
    let rsl = valuator::richness_structure(&mut tape, f.a_z1, model.config().l, f.a_z2)?;
    let (rnl, _) = valuator::richness_node(&mut tape, v, f.h_z1, f.h_z2, f.a_z2, f.target)?;
    Ok(RichnessScore::new(tape.value(rsl).item(), tape.value(rnl).item()))
}

/// Weighted prototype of `K` support embeddings (`1 x D` each). Weights
/// are the softmax of `scores`, or uniform without scores. Returns the
/// prototype and the `K x 1` weights.
pub fn prototype(tape: &mut Tape, hs: &[Var], scores: Option<&[Var]>) -> Result<(Var, Var)> {
    let stacked = tape.concat_rows(hs)?;
    let k = hs.len();
    let w = match scores {
        Some(s) => {
            let s = tape.concat_rows(s)?;
            tape.softmax(s, Axis::Rows)
        }
        None => tape.constant(Tensor::full(k, 1, 1.0 / k as f64)),
    };
    let wt = tape.transpose(w);
    Ok((tape.matmul(wt, stacked)?, w))
}

/// Value-level prototypes. `support[c]` holds the embeddings of class
/// `classes[c]` and `scores[c]` their richness scores.
pub fn prototypes(
    classes: &[ClassId],
    support: &[Vec<Vec<f64>>],
    scores: &[Vec<f64>],
    use_valuator: bool,
) -> Result<Vec<Prototype>> {
    let mut tape = Tape::inference();
    let mut out = Vec::with_capacity(classes.len());
    for (c, &class) in classes.iter().enumerate() {
        let hs = support[c]
            .iter()
            .map(|h| Tensor::new(1, h.len(), h.clone()).map(|t| tape.constant(t)))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let ss: Vec<Var> = scores[c].iter().map(|&s| tape.scalar(s)).collect();
        let (p, w) = prototype(&mut tape, &hs, use_valuator.then_some(&ss[..]))?;
        out.push(Prototype {
            class,
            vector: tape.value(p).data().to_vec(),
            weights: tape.value(w).data().to_vec(),
        });
    }
    Ok(out)
}

/// `softmax_c(-||q - proto_c||^2)` for every row of `queries`.
pub fn class_log_probs(tape: &mut Tape, queries: Var, protos: Var) -> Result<Var> {
    let d = tape.sq_dist(queries, protos)?;
    let neg = tape.neg(d);
    Ok(tape.log_softmax(neg, Axis::Cols))
}

/// Class probabilities of one query embedding.
pub fn classify(query: &[f64], protos: &[Prototype]) -> Result<Vec<f64>> {
    let mut tape = Tape::inference();
    let q = tape.constant(Tensor::new(1, query.len(), query.to_vec())?);
    let rows: Vec<Vec<f64>> = protos.iter().map(|p| p.vector.clone()).collect();
    let p = tape.constant(Tensor::from_rows(&rows)?);
    let lp = class_log_probs(&mut tape, q, p)?;
    Ok(tape.value(lp).data().iter().map(|v| v.exp()).collect())
}

/// Most probable class; ties go to the lowest class id.
pub fn predict(probs: &[f64], classes: &[ClassId]) -> ClassId {
    let mut best = 0;
    for i in 1..probs.len() {
        if probs[i] > probs[best] || (probs[i] == probs[best] && classes[i] < classes[best]) {
            best = i;
        }
    }
    classes[best]
}

/// The graphs and relation families on each side of an episode.
#[derive(Clone, Copy, Debug)]
pub struct EpisodeGraphs<'a> {
    pub support: &'a HeteroGraph,
    pub support_ctx: &'a RelationContext,
    pub query: &'a HeteroGraph,
    pub query_ctx: &'a RelationContext,
}

impl<'a> EpisodeGraphs<'a> {
    /// Both sides on one graph.
    pub fn single(g: &'a HeteroGraph, ctx: &'a RelationContext) -> Self {
        Self {
            support: g,
            support_ctx: ctx,
            query: g,
            query_ctx: ctx,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub task: usize,
    pub l_cls: f64,
    pub l_str: f64,
    pub l_kl: f64,
}

/// Result of running one task through an embedder.
#[derive(Clone, Debug)]
pub struct TaskOutcome {
    pub l_cls: Var,
    pub l_str: Var,
    pub l_kl: Var,
    /// `l_cls + l_str + lambda l_kl`.
    pub loss: Var,
    pub record: LossRecord,
    /// Query probabilities, `Q x N`, columns in task class order.
    pub probs: Tensor,
    /// `(predicted, true)` per query node.
    pub predictions: Vec<(ClassId, ClassId)>,
    /// Every attention vector and prototype weight vector of the task.
    pub distributions: Vec<Vec<f64>>,
}

fn distributions_of(t: &Tensor, axis: Axis) -> Vec<Vec<f64>> {
    match axis {
        Axis::Cols => (0..t.rows()).map(|r| t.row(r).to_vec()).collect(),
        Axis::Rows => (0..t.cols())
            .map(|c| (0..t.rows()).map(|r| t.get(r, c)).collect())
            .collect(),
    }
}

fn subgraph(g: &HeteroGraph, node: crate::hetgraph::NodeId, hops: usize) -> Result<Subgraph> {
    Ok(khop_subgraph(g, node, hops)?)
}

/// Embeds every node of `task`, builds prototypes and scores the queries.
pub fn task_loss<E: Embedder>(
    tape: &mut Tape,
    model: &E,
    graphs: EpisodeGraphs<'_>,
    task: &Task,
    task_id: usize,
    cfg: &TrainConfig,
    rng: &mut crate::Rng,
) -> Result<TaskOutcome> {
    let hops = model.hops();
    let mut l_str = tape.scalar(0.0);
    let mut l_kl = tape.scalar(0.0);
    let mut attention = Vec::new();
    let mut per_class: Vec<(Vec<Var>, Vec<Var>)> = vec![(Vec::new(), Vec::new()); task.classes.len()];
    let mut scored = true;
    for &(node, class) in &task.support {
        let slot = task
            .class_slot(class)
            .ok_or_else(|| Error::config(format!("support class {class} not in task {task_id}")))?;
        let sub = subgraph(graphs.support, node, hops)?;
        let e = model.embed(tape, &sub, graphs.support_ctx, cfg.ablation, true, rng)?;
        l_str = tape.add(l_str, e.l_str)?;
        l_kl = tape.add(l_kl, e.l_kl)?;
        attention.extend(e.attention);
        per_class[slot].0.push(e.h);
        match e.score {
            Some(s) => per_class[slot].1.push(s),
            None => scored = false,
        }
    }
    let mut protos = Vec::with_capacity(per_class.len());
    let mut distributions = Vec::new();
    for (hs, scores) in &per_class {
        if hs.is_empty() {
            return Err(Error::config(format!("task {task_id} has a class without support")));
        }
        let (p, w) = prototype(tape, hs, scored.then_some(&scores[..]))?;
        distributions.extend(distributions_of(tape.value(w), Axis::Rows));
        protos.push(p);
    }
    let protos = tape.concat_rows(&protos)?;

    let mut queries = Vec::with_capacity(task.query.len());
    let mut picks = Vec::with_capacity(task.query.len());
    for (i, &(node, class)) in task.query.iter().enumerate() {
        let slot = task
            .class_slot(class)
            .ok_or_else(|| Error::config(format!("query class {class} not in task {task_id}")))?;
        let sub = subgraph(graphs.query, node, hops)?;
        let e = model.embed(tape, &sub, graphs.query_ctx, cfg.ablation, false, rng)?;
        l_str = tape.add(l_str, e.l_str)?;
        l_kl = tape.add(l_kl, e.l_kl)?;
        attention.extend(e.attention);
        queries.push(e.h);
        picks.push((i, slot));
    }
    let queries = tape.concat_rows(&queries)?;
    let lp = class_log_probs(tape, queries, protos)?;
    let picked = tape.elems(lp, &picks)?;
    let mean = tape.mean(picked);
    let l_cls = tape.neg(mean);
    let kl_term = tape.scale(l_kl, cfg.lambda_kl);
    let partial = tape.add(l_cls, l_str)?;
    let loss = tape.add(partial, kl_term)?;

    let record = LossRecord {
        epoch: 0,
        task: task_id,
        l_cls: tape.value(l_cls).item(),
        l_str: tape.value(l_str).item(),
        l_kl: tape.value(l_kl).item(),
    };
    if ![record.l_cls, record.l_str, record.l_kl, tape.value(loss).item()]
        .iter()
        .all(|v| v.is_finite())
    {
        return Err(Error::NonFiniteLoss { task: task_id });
    }
    for (v, axis) in attention {
        distributions.extend(distributions_of(tape.value(v), axis));
    }
    let probs = tape.value(lp).map(f64::exp);
    let predictions = task
        .query
        .iter()
        .enumerate()
        .map(|(i, &(_, class))| (predict(probs.row(i), &task.classes), class))
        .collect();
    Ok(TaskOutcome {
        l_cls,
        l_str,
        l_kl,
        loss,
        record,
        probs,
        predictions,
        distributions,
    })
}

fn train_seed(seed: u64, epoch: usize, task: usize) -> u64 {
    derive_seed(seed, ((epoch as u64) << 32) | task as u64)
}

/// Episodic training over `tasks`, one optimiser step per task. `observe`
/// sees every task outcome after its loss is computed.
pub fn meta_train<E: Embedder>(
    model: &mut E,
    graphs: EpisodeGraphs<'_>,
    tasks: &[Task],
    cfg: &TrainConfig,
    mut observe: impl FnMut(&TaskOutcome),
) -> Result<Vec<LossRecord>> {
    cfg.validate()?;
    let mut adam = Adam::new(
        model.params(),
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
    );
    let mut trace = Vec::with_capacity(cfg.epochs * tasks.len());
    for epoch in 0..cfg.epochs {
        for (i, task) in tasks.iter().enumerate() {
            let mut rng = crate::rng(train_seed(cfg.seed, epoch, i));
            let mut tape = Tape::new();
            let mut out = task_loss(&mut tape, model, graphs, task, i, cfg, &mut rng)?;
            out.record.epoch = epoch;
            observe(&out);
            trace.push(out.record);
            model.params_mut().zero_grad();
            tape.backward_into(out.loss, model.params_mut())?;
            adam.step(model.params_mut())?;
        }
    }
    Ok(trace)
}

pub fn write_loss_trace(path: &Path, trace: &[LossRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in trace {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub n_tasks: usize,
    pub n_way: usize,
    pub k_shot: usize,
    pub ablation: String,
    pub seed: u64,
}

impl Metrics {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Unweighted mean of per-class F1 over `classes`. A class with no true
/// positive scores zero.
pub fn macro_f1(predictions: &[(ClassId, ClassId)], classes: &[ClassId]) -> f64 {
    let total: f64 = classes
        .iter()
        .map(|&c| {
            let tp = predictions.iter().filter(|&&(p, t)| p == c && t == c).count() as f64;
            let fp = predictions.iter().filter(|&&(p, t)| p == c && t != c).count() as f64;
            let fn_ = predictions.iter().filter(|&&(p, t)| p != c && t == c).count() as f64;
            if tp == 0.0 {
                0.0
            } else {
                2.0 * tp / (2.0 * tp + fp + fn_)
            }
        })
        .sum();
    total / classes.len() as f64
}

/// Gradient-free evaluation. Tasks run in parallel, each with its own
/// seed, so the result does not depend on scheduling.
pub fn meta_test<E: Embedder>(
    model: &E,
    graphs: EpisodeGraphs<'_>,
    tasks: &[Task],
    cfg: &TrainConfig,
) -> Result<Metrics> {
    let per_task: Vec<Result<(usize, usize, f64)>> = tasks
        .par_iter()
        .enumerate()
        .map(|(i, task)| {
            let mut rng = crate::rng(derive_seed(cfg.seed ^ EVAL_STREAM, i as u64));
            let mut tape = Tape::inference();
            let out = task_loss(&mut tape, model, graphs, task, i, cfg, &mut rng)?;
            let correct = out.predictions.iter().filter(|(p, t)| p == t).count();
            Ok((
                correct,
                out.predictions.len(),
                macro_f1(&out.predictions, &task.classes),
            ))
        })
        .collect();
    let (mut correct, mut seen, mut f1) = (0, 0, 0.0);
    for r in per_task {
        let (c, n, f) = r?;
        correct += c;
        seen += n;
        f1 += f;
    }
    let first = tasks.first();
    Ok(Metrics {
        accuracy: if seen == 0 { 0.0 } else { correct as f64 / seen as f64 },
        macro_f1: if tasks.is_empty() { 0.0 } else { f1 / tasks.len() as f64 },
        n_tasks: tasks.len(),
        n_way: first.map_or(0, |t| t.classes.len()),
        k_shot: first.map_or(0, |t| t.support.len() / t.classes.len().max(1)),
        ablation: cfg.ablation.name().to_string(),
        seed: cfg.seed,
    })
}
