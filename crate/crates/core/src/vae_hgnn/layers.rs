//! Functional building blocks of the network. Each takes the tape and the
//! variables it needs so it can be checked in isolation.

use rand::seq::index;
use rand::Rng;

use super::Pool;
use crate::numcore::{reparam_sample, Axis, GaussianPosterior, NumError, Tape, Tensor, Var};

type Result<T> = std::result::Result<T, NumError>;

/// Elementwise pooling of equally sized matrices.
pub fn pool(mats: &[Tensor], how: Pool) -> Option<Tensor> {
    let first = mats.first()?;
    let mut out = first.clone();
    for m in &mats[1..] {
        for (o, &v) in out.data_mut().iter_mut().zip(m.data()) {
            match how {
                Pool::Max => *o = o.max(v),
                Pool::Sum | Pool::Mean => *o += v,
            }
        }
    }
    if how == Pool::Mean {
        out = out.scaled(1.0 / mats.len() as f64);
    }
    Some(out)
}

/// `D^-1 (A + I)` for a constant adjacency.
pub fn propagation(a: &Tensor) -> Tensor {
    let n = a.rows();
    let mut out = a.clone();
    for i in 0..n {
        out.set(i, i, out.get(i, i) + 1.0);
        let deg: f64 = out.row(i).iter().sum();
        for j in 0..n {
            out.set(i, j, out.get(i, j) / deg);
        }
    }
    out
}

/// `D^-1 (A + I)` on the tape, for adjacencies that depend on parameters.
/// Entries of `a` must be non-negative.
pub fn propagation_var(tape: &mut Tape, a: Var) -> Result<Var> {
    let n = tape.shape(a)[0];
    let eye = tape.constant(Tensor::eye(n));
    let a_hat = tape.add(a, eye)?;
    let deg = tape.sum_axis(a_hat, Axis::Cols);
    tape.div(a_hat, deg)
}

/// One GCN propagation: `ReLU(P X W)`.
pub fn gcn(tape: &mut Tape, p: Var, x: Var, w: Var) -> Result<Var> {
    let pxw = gcn_linear(tape, p, x, w)?;
    Ok(tape.relu(pxw))
}

/// Output GCN layer without activation: `P X W`.
pub fn gcn_linear(tape: &mut Tape, p: Var, x: Var, w: Var) -> Result<Var> {
    let px = tape.matmul(p, x)?;
    tape.matmul(px, w)
}

/// Column `j` of `m` as an `n x 1` value.
pub fn column(tape: &mut Tape, m: Var, j: usize) -> Result<Var> {
    let cols = tape.shape(m)[1];
    let pick = tape.constant(Tensor::from_fn(cols, 1, |r, _| if r == j { 1.0 } else { 0.0 }));
    tape.matmul(m, pick)
}

/// Per-node attention over relation-specific representations. `scores[i]`
/// is the `n x 1` score of relation `i`; returns the attention matrix
/// (`n x R`, rows sum to one) and the weighted sum of `reps`.
pub fn relation_attention(tape: &mut Tape, scores: &[Var], reps: &[Var]) -> Result<(Var, Var)> {
    let stacked = tape.concat(scores)?;
    let alpha = tape.softmax(stacked, Axis::Cols);
    let mut acc: Option<Var> = None;
    for (i, &h) in reps.iter().enumerate() {
        let a_i = column(tape, alpha, i)?;
        let term = tape.mul(a_i, h)?;
        acc = Some(match acc {
            None => term,
            Some(prev) => tape.add(prev, term)?,
        });
    }
    let h = acc.ok_or(NumError::Usage("attention over no relations".into()))?;
    Ok((alpha, h))
}

/// Parameters of the common-relation encoder.
#[derive(Clone, Copy, Debug)]
pub struct EncoderVars {
    pub w: Var,
    pub a: Var,
}

/// `h_i = GCN_c(A_i, X)`, `alpha_i = softmax_i ReLU(a_c . h_i)`,
/// `h^c = sum_i alpha_i h_i`.
pub fn encode_common(tape: &mut Tape, enc: EncoderVars, x: Var, rels: &[Tensor]) -> Result<(Var, Var)> {
    let mut reps = Vec::with_capacity(rels.len());
    let mut scores = Vec::with_capacity(rels.len());
    for a in rels {
        let p = tape.constant(propagation(a));
        let h = gcn(tape, p, x, enc.w)?;
        let s = tape.matmul(h, enc.a)?;
        scores.push(tape.relu(s));
        reps.push(h);
    }
    let (alpha, h) = relation_attention(tape, &scores, &reps)?;
    Ok((h, alpha))
}

/// `h_i = GCN_u(A_i^u pool(A^c), X)`, scored on `[h_i || h^c]`.
pub fn encode_unique(
    tape: &mut Tape,
    enc: EncoderVars,
    x: Var,
    rels: &[Tensor],
    pooled_common: &Tensor,
    h_c: Var,
) -> Result<(Var, Var)> {
    let mut reps = Vec::with_capacity(rels.len());
    let mut scores = Vec::with_capacity(rels.len());
    for a in rels {
        let mixed = a.matmul(pooled_common)?;
        let p = tape.constant(propagation(&mixed));
        let h = gcn(tape, p, x, enc.w)?;
        let cat = tape.concat(&[h, h_c])?;
        let s = tape.matmul(cat, enc.a)?;
        scores.push(tape.relu(s));
        reps.push(h);
    }
    let (alpha, h) = relation_attention(tape, &scores, &reps)?;
    Ok((h, alpha))
}

/// Linear layer `X W + b`.
#[derive(Clone, Copy, Debug)]
pub struct LinearVars {
    pub w: Var,
    pub b: Var,
}

pub fn linear(tape: &mut Tape, l: LinearVars, x: Var) -> Result<Var> {
    let xw = tape.matmul(x, l.w)?;
    tape.add(xw, l.b)
}

pub const SIGMA_FLOOR: f64 = 1e-6;

/// Gaussian head: `mu = lin(h)`, `sigma = softplus(lin(h)) + 1e-6`.
pub fn gaussian_head(tape: &mut Tape, mu: LinearVars, sigma: LinearVars, h: Var) -> Result<GaussianPosterior> {
    let m = linear(tape, mu, h)?;
    let s = linear(tape, sigma, h)?;
    let sp = tape.softplus(s);
    Ok(GaussianPosterior {
        mu: m,
        sigma: tape.add_scalar(sp, SIGMA_FLOOR),
    })
}

/// `beta * P + (1 - beta) * Q` with `beta` a `1 x 1` value in (0, 1).
pub fn metapath_mix(tape: &mut Tape, beta: Var, p: Var, q: Var) -> Result<Var> {
    let bp = tape.mul(beta, p)?;
    let nb = tape.neg(beta);
    let one_minus = tape.add_scalar(nb, 1.0);
    let bq = tape.mul(one_minus, q)?;
    tape.add(bp, bq)
}

/// `H^(i) = A H^(i-1) W^(i)` with `H^(0) = X`. Returns the layer mean and
/// every layer output.
pub fn multilayer_gnn(tape: &mut Tape, a: Var, x: Var, ws: &[Var]) -> Result<(Var, Vec<Var>)> {
    let mut layers = Vec::with_capacity(ws.len());
    let mut h = x;
    for &w in ws {
        let ah = tape.matmul(a, h)?;
        h = tape.matmul(ah, w)?;
        layers.push(h);
    }
    let mut acc = *layers
        .first()
        .ok_or(NumError::Usage("multilayer_gnn needs a layer".into()))?;
    for &layer in &layers[1..] {
        acc = tape.add(acc, layer)?;
    }
    let mean = tape.scale(acc, 1.0 / layers.len() as f64);
    Ok((mean, layers))
}

/// Multi-head weighted cosine similarity, clamped at zero. `heads` is
/// `n_att x D`; row `i` weights every embedding before the cosine.
pub fn graph_learner(tape: &mut Tape, e: Var, heads: Var) -> Result<Var> {
    let n_att = tape.shape(heads)[0];
    let mut acc: Option<Var> = None;
    for i in 0..n_att {
        let w = tape.rows(heads, &[i])?;
        let we = tape.mul(e, w)?;
        let c = tape.cosine_similarity(we, we)?;
        acc = Some(match acc {
            None => c,
            Some(prev) => tape.add(prev, c)?,
        });
    }
    let sum = acc.ok_or(NumError::Usage("graph_learner needs a head".into()))?;
    let mean = tape.scale(sum, 1.0 / n_att as f64);
    Ok(tape.relu(mean))
}

/// Mean of `count` reparameterised draws.
pub fn mc_mean<R: Rng + ?Sized>(tape: &mut Tape, post: &GaussianPosterior, count: usize, rng: &mut R) -> Result<Var> {
    let mut acc = post.sample(tape, rng)?;
    for _ in 1..count {
        let s = reparam_sample(tape, post.mu, post.sigma, rng)?;
        acc = tape.add(acc, s)?;
    }
    Ok(if count > 1 {
        tape.scale(acc, 1.0 / count as f64)
    } else {
        acc
    })
}

/// Pairwise edge logits `s_i + t_j` of the latent space model, where
/// `s = F w_src`, `t = F w_dst` and `F = [U x || e2]` row-wise.
pub fn lsm_logits(tape: &mut Tape, ux: Var, e2: Var, w_src: Var, w_dst: Var) -> Result<Var> {
    let f = tape.concat(&[ux, e2])?;
    let s = tape.matmul(f, w_src)?;
    let t = tape.matmul(f, w_dst)?;
    let tt = tape.transpose(t);
    tape.add(s, tt)
}

/// Mean binary cross-entropy of edge logits against a 0/1 adjacency,
/// self pairs excluded. Above `pair_cap` nodes only the positive pairs and
/// as many sampled negatives enter the mean.
pub fn structure_loss<R: Rng + ?Sized>(
    tape: &mut Tape,
    logits: Var,
    adj: &Tensor,
    pair_cap: usize,
    rng: &mut R,
) -> Result<Var> {
    let n = adj.rows();
    if n < 2 {
        return Ok(tape.scalar(0.0));
    }
    if n <= pair_cap {
        // softplus(l) - a l, masked off the diagonal
        let sp = tape.softplus(logits);
        let a = tape.constant(adj.clone());
        let al = tape.mul(a, logits)?;
        let bce = tape.sub(sp, al)?;
        let mask = tape.constant(Tensor::from_fn(n, n, |i, j| if i == j { 0.0 } else { 1.0 }));
        let masked = tape.mul(bce, mask)?;
        let total = tape.sum(masked);
        return Ok(tape.scale(total, 1.0 / (n * (n - 1)) as f64));
    }
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            if adj.get(i, j) > 0.0 {
                pos.push((i, j));
            } else {
                neg.push((i, j));
            }
        }
    }
    let take = pos.len().min(neg.len());
    let mut pairs = pos.clone();
    pairs.extend(index::sample(rng, neg.len(), take).into_iter().map(|k| neg[k]));
    let picked = tape.elems(logits, &pairs)?;
    let targets = tape.constant(Tensor::from_fn(
        pairs.len(),
        1,
        |r, _| {
            if r < pos.len() {
                1.0
            } else {
                0.0
            }
        },
    ));
    let sp = tape.softplus(picked);
    let al = tape.mul(targets, picked)?;
    let bce = tape.sub(sp, al)?;
    Ok(tape.mean(bce))
}
