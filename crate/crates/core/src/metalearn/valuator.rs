//! Richness scores of labelled support nodes.

use serde::{Deserialize, Serialize};

use crate::numcore::{Axis, NumError, Tape, Tensor, Var};
use crate::vae_hgnn::ValuatorVars;

type Result<T> = std::result::Result<T, NumError>;

pub const EPSILON: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RichnessScore {
    pub structural: f64,
    pub nodal: f64,
    pub total: f64,
}

impl RichnessScore {
    pub fn new(structural: f64, nodal: f64) -> Self {
        Self {
            structural,
            nodal,
            total: structural + nodal,
        }
    }
}

/// Cosine of two flattened matrices; zero when either is all zeros.
pub fn matrix_cosine(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let ab = tape.mul(a, b)?;
    let dot = tape.sum(ab);
    let aa = tape.mul(a, a)?;
    let na = tape.sum(aa);
    let bb = tape.mul(b, b)?;
    let nb = tape.sum(bb);
    if tape.value(na).item() == 0.0 || tape.value(nb).item() == 0.0 {
        return Ok(tape.scalar(0.0));
    }
    let prod = tape.mul(na, nb)?;
    let inv = tape.powf(prod, -0.5)?;
    tape.mul(dot, inv)
}

/// `(1/l) sum_{i=1..l} A^i`.
pub fn power_mean(tape: &mut Tape, a: Var, l: usize) -> Result<Var> {
    if l == 0 {
        return Err(NumError::Usage("power_mean needs l >= 1".into()));
    }
    let mut p = a;
    let mut acc = a;
    for _ in 1..l {
        p = tape.matmul(p, a)?;
        acc = tape.add(acc, p)?;
    }
    Ok(tape.scale(acc, 1.0 / l as f64))
}

/// Mean off-diagonal in-degree of a weighted adjacency.
pub fn mean_in_degree(tape: &mut Tape, a: Var) -> Result<Var> {
    let n = tape.shape(a)[0];
    let mask = tape.constant(Tensor::from_fn(n, n, |i, j| if i == j { 0.0 } else { 1.0 }));
    let off = tape.mul(a, mask)?;
    let total = tape.sum(off);
    Ok(tape.scale(total, 1.0 / n as f64))
}

/// `rsl = cos(A_z1^sum, A_z2) + ln(mean in-degree of A_z2 + eps)`.
pub fn richness_structure(tape: &mut Tape, a_z1: Var, l: usize, a_z2: Var) -> Result<Var> {
    let sum = power_mean(tape, a_z1, l)?;
    let cos = matrix_cosine(tape, sum, a_z2)?;
    let deg = mean_in_degree(tape, a_z2)?;
    let shifted = tape.add_scalar(deg, EPSILON);
    let log_deg = tape.ln(shifted)?;
    tape.add(cos, log_deg)
}

/// Neighbours of `t` under a learned adjacency: positive entries, self excluded.
pub fn neighbours(a_z2: &Tensor, t: usize) -> Vec<usize> {
    (0..a_z2.cols()).filter(|&j| j != t && a_z2.get(t, j) > 0.0).collect()
}

/// `rnl = sum_j gamma_tj sn(t, j)` with
/// `sn(t, j) = tanh(h_z1[t] ws_t + h_z2[j] ws_n)` and
/// `gamma_t = softmax_j LeakyReLU(h_z2[t] as_t + h_z2[j] as_j)`.
///
/// Returns `rnl` and the attention column, or zero and `None` when `t` has
/// no neighbour.
pub fn richness_node(
    tape: &mut Tape,
    v: ValuatorVars,
    h_z1: Var,
    h_z2: Var,
    a_z2: Var,
    t: usize,
) -> Result<(Var, Option<Var>)> {
    let nbrs = neighbours(tape.value(a_z2), t);
    if nbrs.is_empty() {
        return Ok((tape.scalar(0.0), None));
    }
    let anchor = tape.rows(h_z2, &[t])?;
    let hj = tape.rows(h_z2, &nbrs)?;
    let s_t = tape.matmul(anchor, v.as_t)?;
    let s_j = tape.matmul(hj, v.as_j)?;
    let e = tape.add(s_j, s_t)?;
    let e = tape.leaky_relu(e);
    let gamma = tape.softmax(e, Axis::Rows);

    let z1_t = tape.rows(h_z1, &[t])?;
    let p_t = tape.matmul(z1_t, v.ws_t)?;
    let p_j = tape.matmul(hj, v.ws_n)?;
    let pre = tape.add(p_j, p_t)?;
    let sn = tape.tanh(pre);
    let weighted = tape.mul(gamma, sn)?;
    Ok((tape.sum(weighted), Some(gamma)))
}
