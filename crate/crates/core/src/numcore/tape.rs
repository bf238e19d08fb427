//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every op appends a node holding its forward value. When recording is on,
//! the node also remembers which op produced it so [`Tape::backward`] can
//! replay the chain rule in reverse order. Forward arithmetic is identical
//! in both modes.

use super::{NumError, ParamId, ParamStore, Tensor};

/// Handle to a value on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Reduction / normalisation axis. `Rows` collapses the row dimension
/// (one result per column); `Cols` collapses columns (one result per row).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Concat(Vec<Var>),
    ConcatRows(Vec<Var>),
    Rows(Var, Vec<usize>),
    Elems(Var, Vec<(usize, usize)>),
    Relu(Var),
    LeakyRelu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softplus(Var),
    Exp(Var),
    Ln(Var),
    Powf(Var, f64),
    Softmax(Var, Axis),
    LogSoftmax(Var, Axis),
    Sum(Var),
    Mean(Var),
    SumAxis(Var),
    RowNormalize(Var),
    SqDist(Var, Var),
    MaxOf(Vec<Var>),
    GaussianKl(Var, Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradient tape. One tape per forward pass; cheap to create.
pub struct Tape {
    nodes: Vec<Node>,
    record: bool,
    params: Vec<(Var, ParamId)>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> NumError {
    NumError::Shape {
        op,
        left: a.shape(),
        right: b.shape(),
    }
}

fn broadcast_dim(a: usize, b: usize) -> Option<usize> {
    if a == b {
        Some(a)
    } else if a == 1 {
        Some(b)
    } else if b == 1 {
        Some(a)
    } else {
        None
    }
}

/// Elementwise binary op with numpy-style broadcasting of size-1 dimensions.
fn broadcast_zip(op: &'static str, a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor, NumError> {
    let rows = broadcast_dim(a.rows(), b.rows()).ok_or_else(|| shape_err(op, a, b))?;
    let cols = broadcast_dim(a.cols(), b.cols()).ok_or_else(|| shape_err(op, a, b))?;
    let (ar, ac) = (a.rows() > 1, a.cols() > 1);
    let (br, bc) = (b.rows() > 1, b.cols() > 1);
    Ok(Tensor::from_fn(rows, cols, |r, c| {
        let x = a.get(if ar { r } else { 0 }, if ac { c } else { 0 });
        let y = b.get(if br { r } else { 0 }, if bc { c } else { 0 });
        f(x, y)
    }))
}

/// Sums a broadcast gradient back down to `shape`.
fn reduce_to(grad: &Tensor, shape: [usize; 2]) -> Tensor {
    if grad.shape() == shape {
        return grad.clone();
    }
    let mut out = Tensor::zeros(shape[0], shape[1]);
    for r in 0..grad.rows() {
        let rr = if shape[0] == 1 { 0 } else { r };
        for c in 0..grad.cols() {
            let cc = if shape[1] == 1 { 0 } else { c };
            let v = out.get(rr, cc) + grad.get(r, c);
            out.set(rr, cc, v);
        }
    }
    out
}

fn expand(t: &Tensor, shape: [usize; 2]) -> Tensor {
    if t.shape() == shape {
        return t.clone();
    }
    let (tr, tc) = (t.rows() > 1, t.cols() > 1);
    Tensor::from_fn(shape[0], shape[1], |r, c| {
        t.get(if tr { r } else { 0 }, if tc { c } else { 0 })
    })
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

fn softmax_along(x: &Tensor, axis: Axis, log: bool) -> Tensor {
    let mut out = x.clone();
    let (outer, inner) = match axis {
        Axis::Cols => (x.rows(), x.cols()),
        Axis::Rows => (x.cols(), x.rows()),
    };
    let at = |o: usize, i: usize| match axis {
        Axis::Cols => (o, i),
        Axis::Rows => (i, o),
    };
    for o in 0..outer {
        let mut max = f64::NEG_INFINITY;
        for i in 0..inner {
            let (r, c) = at(o, i);
            max = max.max(x.get(r, c));
        }
        let mut total = 0.0;
        for i in 0..inner {
            let (r, c) = at(o, i);
            total += (x.get(r, c) - max).exp();
        }
        let log_total = total.ln();
        for i in 0..inner {
            let (r, c) = at(o, i);
            let shifted = x.get(r, c) - max;
            let v = if log {
                shifted - log_total
            } else {
                shifted.exp() / total
            };
            out.set(r, c, v);
        }
    }
    out
}

fn row_norms(x: &Tensor) -> Vec<f64> {
    (0..x.rows())
        .map(|r| x.row(r).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect()
}

impl Tape {
    /// A tape that records ops for differentiation.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            record: true,
            params: Vec::new(),
        }
    }

    /// A tape that only evaluates values; `backward` yields no gradients.
    pub fn inference() -> Self {
        Self {
            record: false,
            ..Self::new()
        }
    }

    pub fn is_recording(&self) -> bool {
        self.record
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = self.record && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Adds a leaf value.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: requires_grad && self.record,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.constant(Tensor::scalar(v))
    }

    /// Binds a model parameter as a differentiable leaf. Binding the same
    /// parameter twice yields the same `Var`.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&(v, _)) = self.params.iter().find(|(_, p)| *p == id) {
            return v;
        }
        let v = self.leaf(store.value(id).clone(), true);
        self.params.push((v, id));
        v
    }

    pub fn bound_params(&self) -> &[(Var, ParamId)] {
        &self.params
    }

    // -- linear algebra ---------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a), &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let value = broadcast_zip("add", self.value(a), self.value(b), |x, y| x + y)?;
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let value = broadcast_zip("sub", self.value(a), self.value(b), |x, y| x - y)?;
        Ok(self.push(value, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let value = broadcast_zip("mul", self.value(a), self.value(b), |x, y| x * y)?;
        Ok(self.push(value, Op::Mul(a, b), &[a, b]))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let value = broadcast_zip("div", self.value(a), self.value(b), |x, y| x / y)?;
        Ok(self.push(value, Op::Div(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).scaled(s);
        self.push(value, Op::Scale(a, s), &[a])
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|v| v + s);
        self.push(value, Op::AddScalar(a), &[a])
    }

    /// Concatenation along the column axis (the "last" axis).
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, NumError> {
        let first = *parts.first().ok_or(NumError::Usage("concat of nothing".into()))?;
        let rows = self.value(first).rows();
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(shape_err("concat", self.value(first), self.value(p)));
            }
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let value = Tensor::new(rows, cols, data)?;
        Ok(self.push(value, Op::Concat(parts.to_vec()), parts))
    }

    /// Stacks values vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NumError> {
        let first = *parts.first().ok_or(NumError::Usage("concat_rows of nothing".into()))?;
        let cols = self.value(first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return Err(shape_err("concat_rows", self.value(first), t));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let value = Tensor::new(rows, cols, data)?;
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), parts))
    }

    /// Gathers rows by index (repeats allowed).
    pub fn rows(&mut self, a: Var, idx: &[usize]) -> Result<Var, NumError> {
        let t = self.value(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= t.rows()) {
            return Err(NumError::Shape {
                op: "rows",
                left: t.shape(),
                right: [bad, 0],
            });
        }
        let cols = t.cols();
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            data.extend_from_slice(t.row(i));
        }
        let value = Tensor::new(idx.len(), cols, data)?;
        Ok(self.push(value, Op::Rows(a, idx.to_vec()), &[a]))
    }

    /// Gathers single entries into a column vector.
    pub fn elems(&mut self, a: Var, idx: &[(usize, usize)]) -> Result<Var, NumError> {
        let t = self.value(a);
        if let Some(&(r, c)) = idx.iter().find(|&&(r, c)| r >= t.rows() || c >= t.cols()) {
            return Err(NumError::Shape {
                op: "elems",
                left: t.shape(),
                right: [r, c],
            });
        }
        let data = idx.iter().map(|&(r, c)| t.get(r, c)).collect();
        let value = Tensor::new(idx.len(), 1, data)?;
        Ok(self.push(value, Op::Elems(a, idx.to_vec()), &[a]))
    }

    // -- elementwise nonlinearities ----------------------------------------

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v.max(0.0));
        self.push(value, Op::Relu(a), &[a])
    }

    /// LeakyReLU with negative slope [`LEAKY_SLOPE`].
    pub fn leaky_relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| if v > 0.0 { v } else { LEAKY_SLOPE * v });
        self.push(value, Op::LeakyRelu(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        self.push(value, Op::Tanh(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        self.push(value, Op::Sigmoid(a), &[a])
    }

    /// `ln(1 + e^x)`, numerically stable.
    pub fn softplus(&mut self, a: Var) -> Var {
        let value = self.value(a).map(softplus);
        self.push(value, Op::Softplus(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        self.push(value, Op::Exp(a), &[a])
    }

    pub fn ln(&mut self, a: Var) -> Result<Var, NumError> {
        if self.value(a).data().iter().any(|&v| v <= 0.0 || v.is_nan()) {
            return Err(NumError::Domain {
                op: "ln",
                msg: "non-positive input".into(),
            });
        }
        let value = self.value(a).map(f64::ln);
        Ok(self.push(value, Op::Ln(a), &[a]))
    }

    /// Elementwise power; the base must be positive for non-integer exponents.
    pub fn powf(&mut self, a: Var, p: f64) -> Result<Var, NumError> {
        if p.fract() != 0.0 && self.value(a).data().iter().any(|&v| v <= 0.0) {
            return Err(NumError::Domain {
                op: "powf",
                msg: format!("non-positive base with exponent {p}"),
            });
        }
        let value = self.value(a).map(|v| v.powf(p));
        Ok(self.push(value, Op::Powf(a, p), &[a]))
    }

    pub fn softmax(&mut self, a: Var, axis: Axis) -> Var {
        let value = softmax_along(self.value(a), axis, false);
        self.push(value, Op::Softmax(a, axis), &[a])
    }

    pub fn log_softmax(&mut self, a: Var, axis: Axis) -> Var {
        let value = softmax_along(self.value(a), axis, true);
        self.push(value, Op::LogSoftmax(a, axis), &[a])
    }

    // -- reductions --------------------------------------------------------

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        self.push(value, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let value = Tensor::scalar(t.sum() / t.len().max(1) as f64);
        self.push(value, Op::Mean(a), &[a])
    }

    pub fn sum_axis(&mut self, a: Var, axis: Axis) -> Var {
        let t = self.value(a);
        let value = match axis {
            Axis::Rows => Tensor::from_fn(1, t.cols(), |_, c| (0..t.rows()).map(|r| t.get(r, c)).sum()),
            Axis::Cols => Tensor::from_fn(t.rows(), 1, |r, _| t.row(r).iter().sum()),
        };
        self.push(value, Op::SumAxis(a), &[a])
    }

    pub fn mean_axis(&mut self, a: Var, axis: Axis) -> Var {
        let n = match axis {
            Axis::Rows => self.value(a).rows(),
            Axis::Cols => self.value(a).cols(),
        };
        let s = self.sum_axis(a, axis);
        self.scale(s, 1.0 / n.max(1) as f64)
    }

    // -- geometry ----------------------------------------------------------

    /// Scales each row to unit L2 norm; all-zero rows stay zero.
    pub fn row_normalize(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let norms = row_norms(t);
        let value = Tensor::from_fn(t.rows(), t.cols(), |r, c| {
            if norms[r] > 0.0 {
                t.get(r, c) / norms[r]
            } else {
                0.0
            }
        });
        self.push(value, Op::RowNormalize(a), &[a])
    }

    /// Pairwise cosine similarity between rows of `a` and rows of `b`.
    /// Pairs involving a zero row have similarity 0.
    pub fn cosine_similarity(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        if self.value(a).cols() != self.value(b).cols() {
            return Err(shape_err("cosine_similarity", self.value(a), self.value(b)));
        }
        let na = self.row_normalize(a);
        let nb = if a == b { na } else { self.row_normalize(b) };
        let nbt = self.transpose(nb);
        self.matmul(na, nbt)
    }

    /// Pairwise squared Euclidean distance between rows of `a` and rows of `b`.
    pub fn sq_dist(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.cols() {
            return Err(shape_err("sq_dist", ta, tb));
        }
        let value = Tensor::from_fn(ta.rows(), tb.rows(), |i, j| {
            ta.row(i).iter().zip(tb.row(j)).map(|(x, y)| (x - y) * (x - y)).sum()
        });
        Ok(self.push(value, Op::SqDist(a, b), &[a, b]))
    }

    /// Elementwise maximum of equally shaped values.
    pub fn max_of(&mut self, parts: &[Var]) -> Result<Var, NumError> {
        let first = *parts.first().ok_or(NumError::Usage("max_of nothing".into()))?;
        let mut value = self.value(first).clone();
        for &p in &parts[1..] {
            let t = self.value(p);
            if t.shape() != value.shape() {
                return Err(shape_err("max_of", &value, t));
            }
            for (o, &v) in value.data_mut().iter_mut().zip(t.data()) {
                if v > *o {
                    *o = v;
                }
            }
        }
        Ok(self.push(value, Op::MaxOf(parts.to_vec()), parts))
    }

    /// Closed-form `KL(N(mu, diag(sigma^2)) || N(0, I))`, summed over all
    /// entries.
    pub fn gaussian_kl(&mut self, mu: Var, sigma: Var) -> Result<Var, NumError> {
        let (m, s) = (self.value(mu), self.value(sigma));
        if m.shape() != s.shape() {
            return Err(shape_err("gaussian_kl", m, s));
        }
        if s.data().iter().any(|&v| v <= 0.0 || v.is_nan()) {
            return Err(NumError::Domain {
                op: "gaussian_kl",
                msg: "sigma must be strictly positive".into(),
            });
        }
        let kl: f64 = m
            .data()
            .iter()
            .zip(s.data())
            .map(|(&mu, &sd)| 0.5 * (mu * mu + sd * sd - 1.0 - 2.0 * sd.ln()))
            .sum();
        Ok(self.push(Tensor::scalar(kl), Op::GaussianKl(mu, sigma), &[mu, sigma]))
    }

    // -- backward ----------------------------------------------------------

    /// Reverse pass from a scalar `loss`. Returns gradients for every node
    /// that requires them.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumError> {
        let lt = self.value(loss);
        if lt.shape() != [1, 1] {
            return Err(NumError::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                lt.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        // keep gradients only where requested
        for (g, node) in grads.iter_mut().zip(&self.nodes) {
            if !node.requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    /// Runs `backward` and accumulates parameter gradients into `store`.
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore) -> Result<(), NumError> {
        let grads = self.backward(loss)?;
        for &(v, id) in &self.params {
            if let Some(g) = grads.get(v) {
                store.accumulate_grad(id, g);
            }
        }
        Ok(())
    }

    fn send(&self, grads: &mut [Option<Tensor>], to: Var, g: Tensor) {
        if !self.nodes[to.0].requires_grad {
            return;
        }
        match &mut grads[to.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let out = &self.nodes[idx].value;
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.requires_grad(*a) {
                    self.send(grads, *a, g.matmul_raw(&tb.transpose()));
                }
                if self.requires_grad(*b) {
                    self.send(grads, *b, ta.transpose().matmul_raw(g));
                }
            }
            Op::Transpose(a) => self.send(grads, *a, g.transpose()),
            Op::Add(a, b) => {
                self.send(grads, *a, reduce_to(g, self.shape(*a)));
                self.send(grads, *b, reduce_to(g, self.shape(*b)));
            }
            Op::Sub(a, b) => {
                self.send(grads, *a, reduce_to(g, self.shape(*a)));
                self.send(grads, *b, reduce_to(&g.scaled(-1.0), self.shape(*b)));
            }
            Op::Mul(a, b) => {
                let shape = g.shape();
                let (ea, eb) = (expand(self.value(*a), shape), expand(self.value(*b), shape));
                if self.requires_grad(*a) {
                    let ga = Tensor::from_fn(shape[0], shape[1], |r, c| g.get(r, c) * eb.get(r, c));
                    self.send(grads, *a, reduce_to(&ga, self.shape(*a)));
                }
                if self.requires_grad(*b) {
                    let gb = Tensor::from_fn(shape[0], shape[1], |r, c| g.get(r, c) * ea.get(r, c));
                    self.send(grads, *b, reduce_to(&gb, self.shape(*b)));
                }
            }
            Op::Div(a, b) => {
                let shape = g.shape();
                let (ea, eb) = (expand(self.value(*a), shape), expand(self.value(*b), shape));
                if self.requires_grad(*a) {
                    let ga = Tensor::from_fn(shape[0], shape[1], |r, c| g.get(r, c) / eb.get(r, c));
                    self.send(grads, *a, reduce_to(&ga, self.shape(*a)));
                }
                if self.requires_grad(*b) {
                    let gb = Tensor::from_fn(shape[0], shape[1], |r, c| {
                        let d = eb.get(r, c);
                        -g.get(r, c) * ea.get(r, c) / (d * d)
                    });
                    self.send(grads, *b, reduce_to(&gb, self.shape(*b)));
                }
            }
            Op::Scale(a, s) => self.send(grads, *a, g.scaled(*s)),
            Op::AddScalar(a) => self.send(grads, *a, g.clone()),
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.requires_grad(p) {
                        let gp = Tensor::from_fn(g.rows(), w, |r, c| g.get(r, offset + c));
                        self.send(grads, p, gp);
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let h = self.value(p).rows();
                    if self.requires_grad(p) {
                        let gp = Tensor::from_fn(h, g.cols(), |r, c| g.get(offset + r, c));
                        self.send(grads, p, gp);
                    }
                    offset += h;
                }
            }
            Op::Rows(a, idx) => {
                let ta = self.value(*a);
                let mut ga = Tensor::zeros(ta.rows(), ta.cols());
                for (k, &i) in idx.iter().enumerate() {
                    for c in 0..ta.cols() {
                        let v = ga.get(i, c) + g.get(k, c);
                        ga.set(i, c, v);
                    }
                }
                self.send(grads, *a, ga);
            }
            Op::Elems(a, idx) => {
                let ta = self.value(*a);
                let mut ga = Tensor::zeros(ta.rows(), ta.cols());
                for (k, &(r, c)) in idx.iter().enumerate() {
                    let v = ga.get(r, c) + g.get(k, 0);
                    ga.set(r, c, v);
                }
                self.send(grads, *a, ga);
            }
            Op::Relu(a) => {
                let x = self.value(*a);
                let ga = Tensor::from_fn(
                    x.rows(),
                    x.cols(),
                    |r, c| {
                        if x.get(r, c) > 0.0 {
                            g.get(r, c)
                        } else {
                            0.0
                        }
                    },
                );
                self.send(grads, *a, ga);
            }
            Op::LeakyRelu(a) => {
                let x = self.value(*a);
                let ga = Tensor::from_fn(x.rows(), x.cols(), |r, c| {
                    if x.get(r, c) > 0.0 {
                        g.get(r, c)
                    } else {
                        LEAKY_SLOPE * g.get(r, c)
                    }
                });
                self.send(grads, *a, ga);
            }
            Op::Tanh(a) => {
                let ga = Tensor::from_fn(out.rows(), out.cols(), |r, c| {
                    let y = out.get(r, c);
                    g.get(r, c) * (1.0 - y * y)
                });
                self.send(grads, *a, ga);
            }
            Op::Sigmoid(a) => {
                let ga = Tensor::from_fn(out.rows(), out.cols(), |r, c| {
                    let y = out.get(r, c);
                    g.get(r, c) * y * (1.0 - y)
                });
                self.send(grads, *a, ga);
            }
            Op::Softplus(a) => {
                let x = self.value(*a);
                let ga = Tensor::from_fn(x.rows(), x.cols(), |r, c| g.get(r, c) * sigmoid(x.get(r, c)));
                self.send(grads, *a, ga);
            }
            Op::Exp(a) => {
                let ga = Tensor::from_fn(out.rows(), out.cols(), |r, c| g.get(r, c) * out.get(r, c));
                self.send(grads, *a, ga);
            }
            Op::Ln(a) => {
                let x = self.value(*a);
                let ga = Tensor::from_fn(x.rows(), x.cols(), |r, c| g.get(r, c) / x.get(r, c));
                self.send(grads, *a, ga);
            }
            Op::Powf(a, p) => {
                let x = self.value(*a);
                let ga = Tensor::from_fn(x.rows(), x.cols(), |r, c| g.get(r, c) * p * x.get(r, c).powf(p - 1.0));
                self.send(grads, *a, ga);
            }
            Op::Softmax(a, axis) => {
                let mut ga = Tensor::zeros(out.rows(), out.cols());
                match axis {
                    Axis::Cols => {
                        for r in 0..out.rows() {
                            let dot: f64 = (0..out.cols()).map(|c| g.get(r, c) * out.get(r, c)).sum();
                            for c in 0..out.cols() {
                                ga.set(r, c, out.get(r, c) * (g.get(r, c) - dot));
                            }
                        }
                    }
                    Axis::Rows => {
                        for c in 0..out.cols() {
                            let dot: f64 = (0..out.rows()).map(|r| g.get(r, c) * out.get(r, c)).sum();
                            for r in 0..out.rows() {
                                ga.set(r, c, out.get(r, c) * (g.get(r, c) - dot));
                            }
                        }
                    }
                }
                self.send(grads, *a, ga);
            }
            Op::LogSoftmax(a, axis) => {
                let mut ga = Tensor::zeros(out.rows(), out.cols());
                match axis {
                    Axis::Cols => {
                        for r in 0..out.rows() {
                            let total: f64 = (0..out.cols()).map(|c| g.get(r, c)).sum();
                            for c in 0..out.cols() {
                                ga.set(r, c, g.get(r, c) - out.get(r, c).exp() * total);
                            }
                        }
                    }
                    Axis::Rows => {
                        for c in 0..out.cols() {
                            let total: f64 = (0..out.rows()).map(|r| g.get(r, c)).sum();
                            for r in 0..out.rows() {
                                ga.set(r, c, g.get(r, c) - out.get(r, c).exp() * total);
                            }
                        }
                    }
                }
                self.send(grads, *a, ga);
            }
            Op::Sum(a) => {
                let [r, c] = self.shape(*a);
                self.send(grads, *a, Tensor::full(r, c, g.item()));
            }
            Op::Mean(a) => {
                let [r, c] = self.shape(*a);
                self.send(grads, *a, Tensor::full(r, c, g.item() / (r * c).max(1) as f64));
            }
            Op::SumAxis(a) => {
                let shape = self.shape(*a);
                self.send(grads, *a, expand(g, shape));
            }
            Op::RowNormalize(a) => {
                let x = self.value(*a);
                let norms = row_norms(x);
                let mut ga = Tensor::zeros(x.rows(), x.cols());
                for (r, &norm) in norms.iter().enumerate() {
                    if norm == 0.0 {
                        continue;
                    }
                    let dot: f64 = (0..x.cols()).map(|c| out.get(r, c) * g.get(r, c)).sum();
                    for c in 0..x.cols() {
                        ga.set(r, c, (g.get(r, c) - out.get(r, c) * dot) / norm);
                    }
                }
                self.send(grads, *a, ga);
            }
            Op::SqDist(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let d = ta.cols();
                let mut ga = Tensor::zeros(ta.rows(), d);
                let mut gb = Tensor::zeros(tb.rows(), d);
                for i in 0..ta.rows() {
                    for j in 0..tb.rows() {
                        let w = 2.0 * g.get(i, j);
                        if w == 0.0 {
                            continue;
                        }
                        for k in 0..d {
                            let diff = w * (ta.get(i, k) - tb.get(j, k));
                            ga.set(i, k, ga.get(i, k) + diff);
                            gb.set(j, k, gb.get(j, k) - diff);
                        }
                    }
                }
                self.send(grads, *a, ga);
                self.send(grads, *b, gb);
            }
            Op::MaxOf(parts) => {
                let n = out.len();
                let mut owner = vec![0usize; n];
                for (k, &p) in parts.iter().enumerate().skip(1) {
                    let t = self.value(p);
                    for (i, o) in owner.iter_mut().enumerate() {
                        if t.data()[i] > self.value(parts[*o]).data()[i] {
                            *o = k;
                        }
                    }
                }
                for (k, &p) in parts.iter().enumerate() {
                    if !self.requires_grad(p) {
                        continue;
                    }
                    let mut gp = Tensor::zeros(out.rows(), out.cols());
                    for (i, &o) in owner.iter().enumerate() {
                        if o == k {
                            gp.data_mut()[i] = g.data()[i];
                        }
                    }
                    self.send(grads, p, gp);
                }
            }
            Op::GaussianKl(mu, sigma) => {
                let s = g.item();
                self.send(grads, *mu, self.value(*mu).scaled(s));
                let gs = self.value(*sigma).map(|v| s * (v - 1.0 / v));
                self.send(grads, *sigma, gs);
            }
        }
    }
}

/// Result of a reverse pass.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}
