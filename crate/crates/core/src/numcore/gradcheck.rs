//! Central finite-difference checks of reverse-mode gradients.

use super::{reparam_sample, Axis, NumError, ParamStore, Tape, Tensor, Var};

/// Step used by the central difference `(f(x+h) - f(x-h)) / 2h`.
pub const FD_STEP: f64 = 1e-5;

/// Below this magnitude gradients are compared in absolute terms; otherwise
/// roundoff in `f` (about `eps * |f| / h`) dominates the relative error of
/// near-zero entries.
pub const REL_FLOOR: f64 = 1e-3;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Largest error seen for one named group of scalars.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct GroupError {
    pub name: String,
    pub entries: usize,
    pub max_rel_error: f64,
}

fn eval_scalar(tape: &Tape, v: Var) -> Result<f64, NumError> {
    let t = tape.value(v);
    if t.shape() != [1, 1] {
        return Err(NumError::Usage(format!(
            "gradient check needs a scalar function, got {:?}",
            t.shape()
        )));
    }
    Ok(t.item())
}

/// Checks gradients with respect to free-standing inputs.
///
/// `f` builds a scalar from leaves bound to `inputs`; it must be
/// deterministic.
pub fn check_inputs<F>(inputs: &[Tensor], f: F) -> Result<Vec<GroupError>, NumError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, NumError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = f(&mut tape, &vars)?;
    eval_scalar(&tape, out)?;
    let grads = tape.backward(out)?;

    let mut report = Vec::with_capacity(inputs.len());
    for (k, input) in inputs.iter().enumerate() {
        let zero = Tensor::zeros(input.rows(), input.cols());
        let analytic = grads.get(vars[k]).unwrap_or(&zero);
        let mut worst: f64 = 0.0;
        for i in 0..input.len() {
            let probe = |delta: f64| -> Result<f64, NumError> {
                let mut shifted: Vec<Tensor> = inputs.to_vec();
                shifted[k].data_mut()[i] += delta;
                let mut t = Tape::inference();
                let vs: Vec<Var> = shifted.into_iter().map(|x| t.constant(x)).collect();
                let o = f(&mut t, &vs)?;
                eval_scalar(&t, o)
            };
            let numeric = (probe(FD_STEP)? - probe(-FD_STEP)?) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(analytic.data()[i], numeric));
        }
        report.push(GroupError {
            name: format!("input{k}"),
            entries: input.len(),
            max_rel_error: worst,
        });
    }
    Ok(report)
}

/// Checks gradients of every parameter in `store`; one report row per
/// parameter. `f` binds parameters itself through [`Tape::param`].
pub fn check_params<F>(store: &ParamStore, f: F) -> Result<Vec<GroupError>, NumError>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var, NumError>,
{
    let mut work = store.clone();
    work.zero_grad();
    let mut tape = Tape::new();
    let out = f(&mut tape, &work)?;
    eval_scalar(&tape, out)?;
    tape.backward_into(out, &mut work)?;
    let analytic: Vec<Tensor> = work.iter().map(|p| p.grad.clone()).collect();

    let mut report = Vec::with_capacity(store.len());
    for id in store.ids() {
        let n = store.value(id).len();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            let mut probe = |delta: f64| -> Result<f64, NumError> {
                let original = work.value(id).data()[i];
                work.value_mut(id).data_mut()[i] = original + delta;
                let mut t = Tape::inference();
                let o = f(&mut t, &work);
                work.value_mut(id).data_mut()[i] = original;
                eval_scalar(&t, o?)
            };
            let numeric = (probe(FD_STEP)? - probe(-FD_STEP)?) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(analytic[id.index()].data()[i], numeric));
        }
        report.push(GroupError {
            name: store.name(id).to_string(),
            entries: n,
            max_rel_error: worst,
        });
    }
    Ok(report)
}

pub fn worst(report: &[GroupError]) -> f64 {
    report.iter().fold(0.0, |m, g| m.max(g.max_rel_error))
}

pub type OpFn = fn(&mut Tape, &[Var]) -> Result<Var, NumError>;

/// Every differentiable op, reduced to a scalar through a fixed random
/// projection so that all output entries contribute distinct weights.
pub fn op_suite() -> Vec<(&'static str, Vec<[usize; 2]>, OpFn)> {
    fn project(t: &mut Tape, v: Var) -> Result<Var, NumError> {
        let [r, c] = t.shape(v);
        let w = Tensor::from_fn(r, c, |i, j| ((i * 7 + j * 3) % 5) as f64 * 0.3 - 0.55);
        let w = t.constant(w);
        let p = t.mul(v, w)?;
        Ok(t.sum(p))
    }
    vec![
        ("matmul", vec![[3, 4], [4, 2]], |t, v| {
            let o = t.matmul(v[0], v[1])?;
            project(t, o)
        }),
        ("add_broadcast", vec![[3, 4], [1, 4]], |t, v| {
            let o = t.add(v[0], v[1])?;
            project(t, o)
        }),
        ("sub_broadcast", vec![[3, 4], [3, 1]], |t, v| {
            let o = t.sub(v[0], v[1])?;
            project(t, o)
        }),
        ("mul", vec![[3, 4], [3, 4]], |t, v| {
            let o = t.mul(v[0], v[1])?;
            project(t, o)
        }),
        ("mul_broadcast", vec![[3, 4], [1, 1]], |t, v| {
            let o = t.mul(v[0], v[1])?;
            project(t, o)
        }),
        ("div", vec![[2, 3], [2, 3]], |t, v| {
            let d = t.exp(v[1]);
            let o = t.div(v[0], d)?;
            project(t, o)
        }),
        ("concat", vec![[3, 2], [3, 3]], |t, v| {
            let o = t.concat(&[v[0], v[1]])?;
            project(t, o)
        }),
        ("concat_rows", vec![[2, 3], [1, 3]], |t, v| {
            let o = t.concat_rows(&[v[0], v[1]])?;
            project(t, o)
        }),
        ("rows", vec![[4, 3]], |t, v| {
            let o = t.rows(v[0], &[2, 0, 2])?;
            project(t, o)
        }),
        ("elems", vec![[3, 3]], |t, v| {
            let o = t.elems(v[0], &[(0, 1), (2, 2), (0, 1)])?;
            project(t, o)
        }),
        ("transpose", vec![[2, 5]], |t, v| {
            let o = t.transpose(v[0]);
            project(t, o)
        }),
        ("relu", vec![[4, 4]], |t, v| {
            let o = t.relu(v[0]);
            project(t, o)
        }),
        ("leaky_relu", vec![[4, 4]], |t, v| {
            let o = t.leaky_relu(v[0]);
            project(t, o)
        }),
        ("tanh", vec![[3, 3]], |t, v| {
            let o = t.tanh(v[0]);
            project(t, o)
        }),
        ("sigmoid", vec![[3, 3]], |t, v| {
            let o = t.sigmoid(v[0]);
            project(t, o)
        }),
        ("softplus", vec![[3, 3]], |t, v| {
            let o = t.softplus(v[0]);
            project(t, o)
        }),
        ("exp", vec![[3, 3]], |t, v| {
            let o = t.exp(v[0]);
            project(t, o)
        }),
        ("ln", vec![[3, 3]], |t, v| {
            let p = t.exp(v[0]);
            let o = t.ln(p)?;
            let o = t.mul(o, o)?;
            project(t, o)
        }),
        ("powf", vec![[3, 3]], |t, v| {
            let p = t.exp(v[0]);
            let o = t.powf(p, -0.5)?;
            project(t, o)
        }),
        ("softmax_cols", vec![[3, 4]], |t, v| {
            let o = t.softmax(v[0], Axis::Cols);
            project(t, o)
        }),
        ("softmax_rows", vec![[3, 4]], |t, v| {
            let o = t.softmax(v[0], Axis::Rows);
            project(t, o)
        }),
        ("log_softmax", vec![[3, 4]], |t, v| {
            let o = t.log_softmax(v[0], Axis::Cols);
            project(t, o)
        }),
        ("mean", vec![[3, 4]], |t, v| {
            let sq = t.mul(v[0], v[0])?;
            Ok(t.mean(sq))
        }),
        ("sum_axis", vec![[3, 4]], |t, v| {
            let o = t.sum_axis(v[0], Axis::Rows);
            let o2 = t.mean_axis(v[0], Axis::Cols);
            let a = project(t, o)?;
            let b = project(t, o2)?;
            t.add(a, b)
        }),
        ("cosine_similarity", vec![[4, 3], [5, 3]], |t, v| {
            let o = t.cosine_similarity(v[0], v[1])?;
            project(t, o)
        }),
        ("sq_dist", vec![[4, 3], [2, 3]], |t, v| {
            let o = t.sq_dist(v[0], v[1])?;
            project(t, o)
        }),
        ("max_of", vec![[3, 3], [3, 3], [3, 3]], |t, v| {
            let o = t.max_of(&[v[0], v[1], v[2]])?;
            project(t, o)
        }),
        ("gaussian_kl", vec![[3, 2], [3, 2]], |t, v| {
            let s = t.softplus(v[1]);
            t.gaussian_kl(v[0], s)
        }),
        ("reparam", vec![[3, 2], [3, 2]], |t, v| {
            let s = t.softplus(v[1]);
            let mut rng = crate::rng(77);
            let z = reparam_sample(t, v[0], s, &mut rng)?;
            project(t, z)
        }),
    ]
}

/// Runs [`op_suite`] on standard normal inputs drawn from `seed`; one row
/// per op.
pub fn check_op_suite(seed: u64) -> Result<Vec<GroupError>, NumError> {
    let mut rng = crate::rng(seed);
    let mut out = Vec::new();
    for (name, shapes, f) in op_suite() {
        let inputs: Vec<Tensor> = shapes.iter().map(|&[r, c]| Tensor::randn(r, c, &mut rng)).collect();
        let report = check_inputs(&inputs, f)?;
        out.push(GroupError {
            name: name.to_string(),
            entries: inputs.iter().map(Tensor::len).sum(),
            max_rel_error: worst(&report),
        });
    }
    Ok(out)
}
