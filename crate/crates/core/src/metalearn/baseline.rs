use crate::hetgraph::{RelationContext, Subgraph};
use crate::numcore::{ParamId, ParamStore, Tape, Tensor};
use crate::vae_hgnn::layers::{self, LinearVars};
use crate::vae_hgnn::Ablation;
use crate::{Error, Result};

use super::{Embedder, NodeEmbedding};

/// Prototypical network over a single GCN on the observed adjacency, with
/// the same input projection as the full model.
#[derive(Clone, Debug)]
pub struct GcnProtoNet {
    hops: usize,
    store: ParamStore,
    proj_w: ParamId,
    proj_b: ParamId,
    gcn: ParamId,
}

impl GcnProtoNet {
    pub fn new(d_in: usize, d: usize, hops: usize, seed: u64) -> Result<Self> {
        if d_in == 0 || d == 0 {
            return Err(Error::config("baseline widths must be >= 1"));
        }
        let mut rng = crate::rng(seed);
        let mut store = ParamStore::new();
        Ok(Self {
            hops,
            proj_w: store.add("proj.w", Tensor::glorot(d_in, d, &mut rng))?,
            proj_b: store.add("proj.b", Tensor::zeros(1, d))?,
            gcn: store.add("gcn.w", Tensor::glorot(d, d, &mut rng))?,
            store,
        })
    }
}

impl Embedder for GcnProtoNet {
    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn hops(&self) -> usize {
        self.hops
    }

    fn embed(
        &self,
        tape: &mut Tape,
        sub: &Subgraph,
        _ctx: &RelationContext,
        _ablation: Ablation,
        _support: bool,
        _rng: &mut crate::Rng,
    ) -> Result<NodeEmbedding> {
        let x = tape.constant(sub.features.clone());
        let proj = LinearVars {
            w: tape.param(&self.store, self.proj_w),
            b: tape.param(&self.store, self.proj_b),
        };
        let x = layers::linear(tape, proj, x)?;
        let p = tape.constant(layers::propagation(&sub.union));
        let w = tape.param(&self.store, self.gcn);
        let h = layers::gcn_linear(tape, p, x, w)?;
        Ok(NodeEmbedding {
            h: tape.rows(h, &[sub.target_index])?,
            score: None,
            l_str: tape.scalar(0.0),
            l_kl: tape.scalar(0.0),
            attention: Vec::new(),
        })
    }
}
