//! The variational heterogeneous GNN.
//!
//! A forward pass over one k-hop subgraph runs, in order: the common and
//! unique relation encoders (posteriors over `e2`), the meta-path
//! multi-layer GNN (`z1`), the graph learner over sampled `e2` (`z2`), the
//! fusion GCN over the observed adjacency, and the latent-space structure
//! decoder. [`CohfModel::forward`] returns every intermediate the node
//! valuator and the losses need.

pub mod layers;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::hetgraph::{RelationContext, Subgraph};
use crate::numcore::{GaussianPosterior, ParamId, ParamStore, Tape, Tensor, Var};
use crate::{Error, Result};
use layers::{EncoderVars, LinearVars};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pool {
    Max,
    Sum,
    Mean,
}

impl FromStr for Pool {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(Pool::Max),
            "sum" => Ok(Pool::Sum),
            "mean" => Ok(Pool::Mean),
            _ => Err(Error::config(format!("unknown pool `{s}` (expected max, sum or mean)"))),
        }
    }
}

impl fmt::Display for Pool {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pool::Max => "max",
            Pool::Sum => "sum",
            Pool::Mean => "mean",
        })
    }
}

/// Model variants used in the ablation study.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ablation {
    #[default]
    None,
    /// Zero `z1` before fusion.
    Mz1,
    /// Zero `z2` before fusion.
    Mz2,
    /// Common relation matrices replaced by the identity.
    Mcomm,
    /// Unique relation matrices replaced by the identity.
    Muniq,
    /// No structure loss.
    Mlsm,
    /// Uniform prototype weights.
    Mvalue,
}

impl Ablation {
    pub const VARIANTS: [Ablation; 6] = [
        Ablation::Mz1,
        Ablation::Mz2,
        Ablation::Mcomm,
        Ablation::Muniq,
        Ablation::Mlsm,
        Ablation::Mvalue,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::None => "none",
            Ablation::Mz1 => "mz1",
            Ablation::Mz2 => "mz2",
            Ablation::Mcomm => "mcomm",
            Ablation::Muniq => "muniq",
            Ablation::Mlsm => "mlsm",
            Ablation::Mvalue => "mvalue",
        }
    }
}

impl FromStr for Ablation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        std::iter::once(Ablation::None)
            .chain(Ablation::VARIANTS)
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::config(format!("unknown ablation `{s}`")))
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d: usize,
    pub l: usize,
    pub n_att: usize,
    pub n_k: usize,
    pub samples_l: usize,
    pub samples_m: usize,
    pub pool_c: Pool,
    pub pool_z1: Pool,
    pub lsm_pair_cap: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d: 64,
            l: 2,
            n_att: 8,
            n_k: 2,
            samples_l: 1,
            samples_m: 1,
            pool_c: Pool::Max,
            pool_z1: Pool::Max,
            lsm_pair_cap: 128,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("d", self.d),
            ("l", self.l),
            ("n_att", self.n_att),
            ("samples_l", self.samples_l),
            ("samples_m", self.samples_m),
        ] {
            if v < 1 {
                return Err(Error::config(format!("{name} must be >= 1")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

impl Linear {
    fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut crate::Rng) -> Result<Self> {
        Ok(Self {
            w: store.add(format!("{name}.w"), Tensor::glorot(fan_in, fan_out, rng))?,
            b: store.add(format!("{name}.b"), Tensor::zeros(1, fan_out))?,
        })
    }

    fn bind(self, tape: &mut Tape, store: &ParamStore) -> LinearVars {
        LinearVars {
            w: tape.param(store, self.w),
            b: tape.param(store, self.b),
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Head {
    mu: Linear,
    sigma: Linear,
}

impl Head {
    fn new(store: &mut ParamStore, name: &str, d: usize, rng: &mut crate::Rng) -> Result<Self> {
        Ok(Self {
            mu: Linear::new(store, &format!("{name}.mu"), d, d, rng)?,
            sigma: Linear::new(store, &format!("{name}.sigma"), d, d, rng)?,
        })
    }

    fn apply(self, tape: &mut Tape, store: &ParamStore, h: Var) -> Result<GaussianPosterior> {
        let mu = self.mu.bind(tape, store);
        let sigma = self.sigma.bind(tape, store);
        Ok(layers::gaussian_head(tape, mu, sigma, h)?)
    }
}

#[derive(Clone, Debug)]
struct Ids {
    proj: Linear,
    gnn_c: ParamId,
    att_c: ParamId,
    gnn_u: ParamId,
    att_u: ParamId,
    head_e2c: Head,
    head_e2u: Head,
    beta_z1: ParamId,
    beta_z2: ParamId,
    z1_layers: Vec<ParamId>,
    head_z1: Head,
    learner_c: ParamId,
    learner_u: ParamId,
    gnn_z2: ParamId,
    head_z2: Head,
    gnn_y: ParamId,
    lsm_u: ParamId,
    lsm_w_src: ParamId,
    lsm_w_dst: ParamId,
    val_ws_t: ParamId,
    val_ws_n: ParamId,
    val_as_t: ParamId,
    val_as_j: ParamId,
}

/// Valuator parameters bound to a tape.
#[derive(Clone, Copy, Debug)]
pub struct ValuatorVars {
    /// `W_s` split into the part applied to `h_z1` of the target and the
    /// part applied to `h_z2` of the neighbour.
    pub ws_t: Var,
    pub ws_n: Var,
    /// `a_s` split into anchor and neighbour parts.
    pub as_t: Var,
    pub as_j: Var,
}

/// Conditions met during a forward pass that change its semantics.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForwardFlags {
    /// No common relation: an identity pseudo-relation was used.
    pub common_fallback: bool,
    /// No unique relation: the unique branch was neutral.
    pub unique_empty: bool,
}

/// Everything produced by one subgraph forward.
#[derive(Clone, Debug)]
pub struct Forward {
    /// Final embeddings, `n x D`.
    pub h: Var,
    pub h_z1: Var,
    pub h_z2: Var,
    /// Propagation matrix of the meta-path GNN (row-normalised `A_z1 + I`).
    pub a_z1: Var,
    /// Raw mixed meta-path matrix.
    pub a_z1_raw: Var,
    pub a_z2: Var,
    /// Relation attention, `n x |rel|`.
    pub alpha_c: Var,
    pub alpha_u: Option<Var>,
    pub e2_c: Var,
    pub e2_u: Var,
    pub l_str: Var,
    pub l_kl: Var,
    pub flags: ForwardFlags,
    pub target: usize,
}

/// Parameters and configuration of the network.
#[derive(Clone, Debug)]
pub struct CohfModel {
    cfg: ModelConfig,
    d_in: usize,
    store: ParamStore,
    ids: Ids,
}

impl CohfModel {
    pub fn new(cfg: ModelConfig, d_in: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if d_in == 0 {
            return Err(Error::config("input feature width must be >= 1"));
        }
        let d = cfg.d;
        let mut rng = crate::rng(seed);
        let rng = &mut rng;
        let mut s = ParamStore::new();
        let ids = Ids {
            proj: Linear::new(&mut s, "proj", d_in, d, rng)?,
            gnn_c: s.add("gnn_c.w", Tensor::glorot(d, d, rng))?,
            att_c: s.add("att_c", Tensor::glorot(d, 1, rng))?,
            gnn_u: s.add("gnn_u.w", Tensor::glorot(d, d, rng))?,
            att_u: s.add("att_u", Tensor::glorot(2 * d, 1, rng))?,
            head_e2c: Head::new(&mut s, "e2c", d, rng)?,
            head_e2u: Head::new(&mut s, "e2u", d, rng)?,
            beta_z1: s.add("beta_z1", Tensor::scalar(0.0))?,
            beta_z2: s.add("beta_z2", Tensor::scalar(0.0))?,
            z1_layers: (0..cfg.l)
                .map(|i| s.add(format!("z1.w{}", i + 1), Tensor::glorot(d, d, rng)))
                .collect::<std::result::Result<_, _>>()?,
            head_z1: Head::new(&mut s, "z1", d, rng)?,
            learner_c: s.add(
                "learner_c",
                Tensor::from_fn(cfg.n_att, d, |_, _| 1.0 + 0.1 * rng.random_range(-1.0..1.0)),
            )?,
            learner_u: s.add(
                "learner_u",
                Tensor::from_fn(cfg.n_att, d, |_, _| 1.0 + 0.1 * rng.random_range(-1.0..1.0)),
            )?,
            gnn_z2: s.add("gnn_z2.w", Tensor::glorot(d, d, rng))?,
            head_z2: Head::new(&mut s, "z2", d, rng)?,
            gnn_y: s.add("gnn_y.w", Tensor::glorot(2 * d, d, rng))?,
            lsm_u: s.add("lsm.u", Tensor::glorot(d_in, d, rng))?,
            lsm_w_src: s.add("lsm.w_src", Tensor::glorot(3 * d, 1, rng))?,
            lsm_w_dst: s.add("lsm.w_dst", Tensor::glorot(3 * d, 1, rng))?,
            val_ws_t: s.add("valuator.ws_t", Tensor::glorot(d, 1, rng))?,
            val_ws_n: s.add("valuator.ws_n", Tensor::glorot(d, 1, rng))?,
            val_as_t: s.add("valuator.as_t", Tensor::glorot(d, 1, rng))?,
            val_as_j: s.add("valuator.as_j", Tensor::glorot(d, 1, rng))?,
        };
        Ok(Self {
            cfg,
            d_in,
            store: s,
            ids,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// `beta_z1`, `beta_z2` after the sigmoid.
    pub fn betas(&self) -> (f64, f64) {
        let sig = |id: ParamId| 1.0 / (1.0 + (-self.store.value(id).item()).exp());
        (sig(self.ids.beta_z1), sig(self.ids.beta_z2))
    }

    pub fn valuator_vars(&self, tape: &mut Tape) -> ValuatorVars {
        ValuatorVars {
            ws_t: tape.param(&self.store, self.ids.val_ws_t),
            ws_n: tape.param(&self.store, self.ids.val_ws_n),
            as_t: tape.param(&self.store, self.ids.val_as_t),
            as_j: tape.param(&self.store, self.ids.val_as_j),
        }
    }

    /// Shared input projection `x W + b`.
    pub fn project(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let l = self.ids.proj.bind(tape, &self.store);
        Ok(layers::linear(tape, l, x)?)
    }

    fn beta(&self, tape: &mut Tape, id: ParamId) -> Var {
        let raw = tape.param(&self.store, id);
        tape.sigmoid(raw)
    }

    /// Relation matrices of the subgraph for the common and unique
    /// families, symmetrised, after ablation rewiring.
    pub fn relation_families(
        &self,
        sub: &Subgraph,
        ctx: &RelationContext,
        ablation: Ablation,
    ) -> (Vec<Tensor>, Vec<Tensor>, ForwardFlags) {
        let n = sub.len();
        let mut flags = ForwardFlags::default();
        let mut common: Vec<Tensor> = ctx
            .common
            .iter()
            .map(|r| sub.symmetric_relation(r).unwrap_or_else(|| Tensor::zeros(n, n)))
            .collect();
        let mut unique: Vec<Tensor> = ctx.unique.iter().filter_map(|r| sub.symmetric_relation(r)).collect();
        if common.is_empty() {
            flags.common_fallback = true;
            common.push(Tensor::eye(n));
        }
        flags.unique_empty = unique.is_empty();
        if ablation == Ablation::Mcomm {
            common.iter_mut().for_each(|a| *a = Tensor::eye(n));
        }
        if ablation == Ablation::Muniq {
            unique.iter_mut().for_each(|a| *a = Tensor::eye(n));
        }
        (common, unique, flags)
    }

    /// `A_z2 = beta_z2 A_z2^c + (1 - beta_z2) A_z2^u`, `H_z2 = GNN_z2(A_z2, X)`
    /// and the `z2` posterior. Depends on the sampled `e2` and the
    /// projected features only.
    pub fn encode_z2(&self, tape: &mut Tape, e2_c: Var, e2_u: Var, x: Var) -> Result<(Var, Var, GaussianPosterior)> {
        let heads_c = tape.param(&self.store, self.ids.learner_c);
        let heads_u = tape.param(&self.store, self.ids.learner_u);
        let a_c = layers::graph_learner(tape, e2_c, heads_c)?;
        let a_u = layers::graph_learner(tape, e2_u, heads_u)?;
        let beta = self.beta(tape, self.ids.beta_z2);
        let a_z2 = layers::metapath_mix(tape, beta, a_c, a_u)?;
        let p = layers::propagation_var(tape, a_z2)?;
        let w = tape.param(&self.store, self.ids.gnn_z2);
        let h_z2 = layers::gcn(tape, p, x, w)?;
        let post = self.ids.head_z2.apply(tape, &self.store, h_z2)?;
        Ok((a_z2, h_z2, post))
    }

    /// Full forward pass over one subgraph.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        sub: &Subgraph,
        ctx: &RelationContext,
        ablation: Ablation,
        rng: &mut R,
    ) -> Result<Forward> {
        let n = sub.len();
        let d = self.cfg.d;
        let st = &self.store;
        let x_raw = tape.constant(sub.features.clone());
        let x = self.project(tape, x_raw)?;
        let (common, unique, flags) = self.relation_families(sub, ctx, ablation);

        // relation encoders
        let enc_c = EncoderVars {
            w: tape.param(st, self.ids.gnn_c),
            a: tape.param(st, self.ids.att_c),
        };
        let (h_c, alpha_c) = layers::encode_common(tape, enc_c, x, &common)?;
        let q_c = self.ids.head_e2c.apply(tape, st, h_c)?;
        let e2_c = q_c.sample(tape, rng)?;
        let kl_c = q_c.kl(tape)?;
        let pooled_c = layers::pool(&common, self.cfg.pool_c).expect("common family is never empty");

        let (e2_u, kl_u, alpha_u) = if unique.is_empty() {
            (tape.constant(Tensor::zeros(n, d)), tape.scalar(0.0), None)
        } else {
            let enc_u = EncoderVars {
                w: tape.param(st, self.ids.gnn_u),
                a: tape.param(st, self.ids.att_u),
            };
            let (h_u, alpha_u) = layers::encode_unique(tape, enc_u, x, &unique, &pooled_c, h_c)?;
            let q_u = self.ids.head_e2u.apply(tape, st, h_u)?;
            let e2_u = q_u.sample(tape, rng)?;
            let kl_u = q_u.kl(tape)?;
            (e2_u, kl_u, Some(alpha_u))
        };
        let kl_sum = tape.add(kl_c, kl_u)?;
        let l_kl = tape.scale(kl_sum, 1.0 / n as f64);

        // z1 from meta-paths
        let pc = tape.constant(layers::pool(&common, self.cfg.pool_z1).expect("non-empty"));
        let pu = tape.constant(layers::pool(&unique, self.cfg.pool_z1).unwrap_or_else(|| Tensor::zeros(n, n)));
        let beta_z1 = self.beta(tape, self.ids.beta_z1);
        let a_z1_raw = layers::metapath_mix(tape, beta_z1, pc, pu)?;
        let a_z1 = layers::propagation_var(tape, a_z1_raw)?;
        let ws: Vec<Var> = self.ids.z1_layers.iter().map(|&w| tape.param(st, w)).collect();
        let (h_z1, _) = layers::multilayer_gnn(tape, a_z1, x, &ws)?;
        let p_z1 = self.ids.head_z1.apply(tape, st, h_z1)?;

        // z2 from the learned graph
        let (a_z2, h_z2, p_z2) = self.encode_z2(tape, e2_c, e2_u, x)?;

        // fusion
        let mut z1 = layers::mc_mean(tape, &p_z1, self.cfg.samples_l, rng)?;
        let mut z2 = layers::mc_mean(tape, &p_z2, self.cfg.samples_m, rng)?;
        if ablation == Ablation::Mz1 {
            z1 = tape.scale(z1, 0.0);
        }
        if ablation == Ablation::Mz2 {
            z2 = tape.scale(z2, 0.0);
        }
        let z = tape.concat(&[z1, z2])?;
        let p_g = tape.constant(layers::propagation(&sub.union));
        let w_y = tape.param(st, self.ids.gnn_y);
        let h = layers::gcn_linear(tape, p_g, z, w_y)?;

        // structure decoder
        let l_str = if ablation == Ablation::Mlsm {
            tape.scalar(0.0)
        } else {
            let u = tape.param(st, self.ids.lsm_u);
            let ux = tape.matmul(x_raw, u)?;
            let e2 = tape.concat(&[e2_c, e2_u])?;
            let w_src = tape.param(st, self.ids.lsm_w_src);
            let w_dst = tape.param(st, self.ids.lsm_w_dst);
            let logits = layers::lsm_logits(tape, ux, e2, w_src, w_dst)?;
            let mut adj = sub.union.clone();
            for i in 0..n {
                adj.set(i, i, 0.0);
            }
            layers::structure_loss(tape, logits, &adj, self.cfg.lsm_pair_cap, rng)?
        };

        Ok(Forward {
            h,
            h_z1,
            h_z2,
            a_z1,
            a_z1_raw,
            a_z2,
            alpha_c,
            alpha_u,
            e2_c,
            e2_u,
            l_str,
            l_kl,
            flags,
            target: sub.target_index,
        })
    }

    /// Edge probabilities of the structure decoder for given latents.
    pub fn lsm_edge_probabilities(&self, tape: &mut Tape, x_raw: Var, e2_c: Var, e2_u: Var) -> Result<Var> {
        let u = tape.param(&self.store, self.ids.lsm_u);
        let ux = tape.matmul(x_raw, u)?;
        let e2 = tape.concat(&[e2_c, e2_u])?;
        let w_src = tape.param(&self.store, self.ids.lsm_w_src);
        let w_dst = tape.param(&self.store, self.ids.lsm_w_dst);
        let logits = layers::lsm_logits(tape, ux, e2, w_src, w_dst)?;
        Ok(tape.sigmoid(logits))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.cfg.clone(),
            d_in: self.d_in,
            params: self
                .store
                .iter()
                .map(|p| ParamRecord {
                    name: p.name.clone(),
                    shape: p.value.shape(),
                    data: p.value.data().to_vec(),
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let mut model = Self::new(ck.config.clone(), ck.d_in, 0)?;
        if ck.params.len() != model.store.len() {
            return Err(Error::config(format!(
                "checkpoint has {} parameters, model expects {}",
                ck.params.len(),
                model.store.len()
            )));
        }
        for rec in &ck.params {
            let id = model
                .store
                .find(&rec.name)
                .ok_or_else(|| Error::config(format!("unknown parameter `{}` in checkpoint", rec.name)))?;
            let t = Tensor::new(rec.shape[0], rec.shape[1], rec.data.clone())?;
            model.store.set_value(id, t)?;
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.to_checkpoint())?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::from_checkpoint(&ck)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

/// On-disk form of a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub d_in: usize,
    pub params: Vec<ParamRecord>,
}
