//! Dense tensors and a define-by-run reverse-mode differentiation graph.
//!
//! Parameters live in a [`ParamStore`] that outlives any single [`Graph`].
//! A graph is built for one training step, borrows the store read-only,
//! and hands back a [`Gradients`] value from [`Graph::backward`] that the
//! caller folds into the store with [`ParamStore::accumulate`].
//!
//! All values are `f64`. Every tensor is one- or two-dimensional; vectors
//! used by the models are `[1, n]` row matrices so that a sequence of them
//! stacks into an `[n, d]` matrix.

use std::ops::Range;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("construction error: shape {shape:?} needs {expected} values, got {actual}")]
    Construction { shape: Vec<usize>, expected: usize, actual: usize },
    #[error("invalid shape {0:?}: every dimension must be at least 1")]
    InvalidShape(Vec<usize>),
    #[error("shape error in {op}: {shapes:?}")]
    Shape { op: &'static str, shapes: Vec<Vec<usize>> },
    #[error("index {index} out of range for {op} with bound {bound}")]
    IndexOutOfRange { op: &'static str, index: usize, bound: usize },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("backward already ran on this graph; build a new forward pass first")]
    BackwardTwice,
    #[error("graph node refers to a parameter but no parameter store is attached")]
    NoParamStore,
    #[error("non-finite value in {0}")]
    NonFinite(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Dense row-major array of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// Initialisation scheme for [`Tensor::create`].
#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    Zeros,
    Gaussian {
        mean: f64,
        variance: f64,
    },
    /// Uniform on `[-limit, limit]`.
    Uniform {
        limit: f64,
    },
    Values(Vec<f64>),
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(TensorError::InvalidShape(shape.to_vec()));
    }
    Ok(shape.iter().product())
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() || shape.is_empty() {
            return Err(TensorError::Construction {
                expected,
                actual: data.len(),
                shape,
            });
        }
        Ok(Tensor { shape, data })
    }

    /// A matrix with `rows` rows, which may be zero (e.g. an empty lookup).
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn row(values: Vec<f64>) -> Self {
        Tensor {
            shape: vec![1, values.len()],
            data: values,
        }
    }

    pub fn create<R: Rng + ?Sized>(shape: &[usize], init: Init, rng: &mut R) -> Result<Self> {
        let n = check_shape(shape)?;
        let data = match init {
            Init::Zeros => vec![0.0; n],
            Init::Gaussian { mean, variance } => {
                let normal = Normal::new(mean, variance.sqrt()).map_err(|_| TensorError::NonFinite(format!("gaussian variance {variance}")))?;
                (0..n).map(|_| normal.sample(rng)).collect()
            }
            Init::Uniform { limit } => (0..n).map(|_| rng.random_range(-limit..=limit)).collect(),
            Init::Values(values) => {
                if values.len() != n {
                    return Err(TensorError::Construction {
                        shape: shape.to_vec(),
                        expected: n,
                        actual: values.len(),
                    });
                }
                values
            }
        };
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Rows when viewed as a matrix; a 1-d tensor is a single row.
    pub fn rows(&self) -> usize {
        if self.shape.len() == 1 {
            1
        } else {
            self.shape[0]
        }
    }

    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap()
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }
}

/// Handle to a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub requires_grad: bool,
    pub grad: Option<Tensor>,
}

/// Owns every trainable (and frozen) tensor of a model.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, requires_grad: bool) -> ParamId {
        self.params.push(Parameter {
            name: name.into(),
            value,
            requires_grad,
            grad: None,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Adds `grads` into the stored gradients. Frozen parameters are skipped.
    pub fn accumulate(&mut self, grads: &Gradients) {
        for (id, g) in grads.params() {
            let p = &mut self.params[id.0];
            if !p.requires_grad {
                continue;
            }
            match &mut p.grad {
                Some(acc) => {
                    for (a, b) in acc.data.iter_mut().zip(g.data()) {
                        *a += b;
                    }
                }
                None => p.grad = Some(g.clone()),
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// Sum of absolute gradient entries over `ids`; absent gradients count as 0.
    pub fn grad_l1(&self, ids: &[ParamId]) -> f64 {
        ids.iter()
            .filter_map(|id| self.params[id.0].grad.as_ref())
            .flat_map(|g| g.data.iter())
            .fold(0.0, |acc, v| acc + v.abs())
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Elu(Var),
    Sum(Var),
    Concat { inputs: Vec<Var>, axis: usize },
    Slice { input: Var, axis: usize, start: usize },
    Gather { input: Var, ids: Vec<usize> },
    Transpose(Var),
    SoftmaxRows(Var),
    CrossEntropy { logits: Var, golds: Vec<usize>, probs: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    op: Op,
    /// `None` for parameter nodes, whose value is read from the store.
    value: Option<Tensor>,
    requires_grad: bool,
}

/// Operation record for one forward pass.
///
/// Nodes are appended in execution order, so the node list is a
/// topological order and backward is a single reverse sweep.
pub struct Graph<'a> {
    store: Option<&'a ParamStore>,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<Var>>,
    backward_done: bool,
}

impl<'a> Default for Graph<'a> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Graph {
            store: None,
            nodes: Vec::new(),
            param_nodes: Vec::new(),
            backward_done: false,
        }
    }

    pub fn with_params(store: &'a ParamStore) -> Self {
        Graph {
            store: Some(store),
            nodes: Vec::new(),
            param_nodes: vec![None; store.len()],
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.store.expect("param node without store").value(*id),
            _ => unreachable!("node without a value"),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value: Some(value),
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Adds a leaf holding `value`.
    pub fn input(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(Op::Leaf, value, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.input(value, false)
    }

    /// Returns the node for parameter `id`, creating it on first use.
    pub fn param(&mut self, id: ParamId) -> Result<Var> {
        let store = self.store.ok_or(TensorError::NoParamStore)?;
        if id.0 >= store.len() {
            return Err(TensorError::IndexOutOfRange {
                op: "param",
                index: id.0,
                bound: store.len(),
            });
        }
        if let Some(v) = self.param_nodes[id.0] {
            return Ok(v);
        }
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
            requires_grad: store.get(id).requires_grad,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes[id.0] = Some(v);
        Ok(v)
    }

    /// Copies the value of `v` into a fresh leaf that blocks gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn shapes(&self, vars: &[Var]) -> Vec<Vec<usize>> {
        vars.iter().map(|&v| self.shape(v).to_vec()).collect()
    }

    fn dims2(&self, v: Var) -> (usize, usize) {
        let t = self.value(v);
        (t.rows(), t.cols())
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::Shape {
                op: "matmul",
                shapes: self.shapes(&[a, b]),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = {
            let (av, bv) = (self.value(a).data(), self.value(b).data());
            let mut out = vec![0.0; m * n];
            matmul_into(av, bv, &mut out, m, k, n);
            out
        };
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Op::MatMul(a, b), Tensor::matrix(m, n, out)?, rg))
    }

    fn elementwise(&mut self, op: &'static str, a: Var, b: Var, f: fn(f64, f64) -> f64) -> Result<Vec<f64>> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::Shape {
                op,
                shapes: self.shapes(&[a, b]),
            });
        }
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        Ok(av.iter().zip(bv).map(|(&x, &y)| f(x, y)).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.elementwise("add", a, b, |x, y| x + y)?;
        let shape = self.shape(a).to_vec();
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Op::Add(a, b), Tensor::new(shape, out)?, rg))
    }

    /// Adds the `[1, n]` row `bias` to every row of the `[m, n]` matrix `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.dims2(x);
        if self.shape(x).len() != 2 || self.shape(bias) != [1, n] {
            return Err(TensorError::Shape {
                op: "add_bias",
                shapes: self.shapes(&[x, bias]),
            });
        }
        let mut out = self.value(x).data().to_vec();
        let bv = self.value(bias).data();
        for row in out.chunks_mut(n) {
            for (o, b) in row.iter_mut().zip(bv) {
                *o += b;
            }
        }
        let rg = self.any_grad(&[x, bias]);
        Ok(self.push(Op::AddBias(x, bias), Tensor::matrix(m, n, out)?, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.elementwise("elementwise_mul", a, b, |x, y| x * y)?;
        let shape = self.shape(a).to_vec();
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Op::Mul(a, b), Tensor::new(shape, out)?, rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let t = self.value(a);
        let out = Tensor {
            shape: t.shape.clone(),
            data: t.data.iter().map(|x| x * c).collect(),
        };
        let rg = self.any_grad(&[a]);
        self.push(Op::Scale(a, c), out, rg)
    }

    fn unary(&mut self, a: Var, op: Op, f: fn(f64) -> f64) -> Var {
        let t = self.value(a);
        let out = Tensor {
            shape: t.shape.clone(),
            data: t.data.iter().map(|&x| f(x)).collect(),
        };
        let rg = self.any_grad(&[a]);
        self.push(op, out, rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn elu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Elu(a), elu)
    }

    /// Sum of all entries, as a `[1]` scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.any_grad(&[a]);
        self.push(Op::Sum(a), Tensor::scalar(s), rg)
    }

    /// Concatenation along `axis`. 1-d inputs only support axis 0.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let shape_err = |g: &Self| TensorError::Shape {
            op: "concat",
            shapes: g.shapes(inputs),
        };
        let first = *inputs.first().ok_or_else(|| shape_err(self))?;
        let ndim = self.shape(first).len();
        if axis >= ndim || inputs.iter().any(|&v| self.shape(v).len() != ndim) {
            return Err(shape_err(self));
        }
        let (out_shape, data) = if ndim == 1 || axis == 0 {
            let tail = &self.shape(first)[1..];
            if inputs.iter().any(|&v| &self.shape(v)[1..] != tail) {
                return Err(shape_err(self));
            }
            let mut shape = self.shape(first).to_vec();
            shape[0] = inputs.iter().map(|&v| self.shape(v)[0]).sum();
            let mut data = Vec::with_capacity(shape.iter().product());
            for &v in inputs {
                data.extend_from_slice(self.value(v).data());
            }
            (shape, data)
        } else {
            let rows = self.shape(first)[0];
            if inputs.iter().any(|&v| self.shape(v)[0] != rows) {
                return Err(shape_err(self));
            }
            let cols: usize = inputs.iter().map(|&v| self.shape(v)[1]).sum();
            let mut data = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                for &v in inputs {
                    data.extend_from_slice(self.value(v).row_slice(r));
                }
            }
            (vec![rows, cols], data)
        };
        let rg = self.any_grad(inputs);
        Ok(self.push(
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            Tensor::new(out_shape, data)?,
            rg,
        ))
    }

    /// Takes `range` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, range: Range<usize>) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || range.start >= range.end || range.end > shape[axis] {
            return Err(TensorError::Shape {
                op: "slice",
                shapes: vec![shape, vec![range.start, range.end]],
            });
        }
        let t = self.value(a);
        let (out_shape, data) = if axis == 0 {
            let inner: usize = shape[1..].iter().product();
            let mut s = shape.clone();
            s[0] = range.len();
            (s, t.data()[range.start * inner..range.end * inner].to_vec())
        } else {
            let (rows, cols) = (shape[0], shape[1]);
            let mut data = Vec::with_capacity(rows * range.len());
            for r in 0..rows {
                data.extend_from_slice(&t.data()[r * cols + range.start..r * cols + range.end]);
            }
            (vec![rows, range.len()], data)
        };
        let rg = self.any_grad(&[a]);
        Ok(self.push(
            Op::Slice {
                input: a,
                axis,
                start: range.start,
            },
            Tensor::new(out_shape, data)?,
            rg,
        ))
    }

    /// Row gather from a 2-d tensor. Backward scatter-adds into the source rows.
    pub fn gather_rows(&mut self, a: Var, ids: &[usize]) -> Result<Var> {
        if self.shape(a).len() != 2 {
            return Err(TensorError::Shape {
                op: "gather_rows",
                shapes: self.shapes(&[a]),
            });
        }
        let (rows, cols) = self.dims2(a);
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(TensorError::IndexOutOfRange {
                op: "gather_rows",
                index: bad,
                bound: rows,
            });
        }
        let t = self.value(a);
        let mut data = Vec::with_capacity(ids.len() * cols);
        for &i in ids {
            data.extend_from_slice(t.row_slice(i));
        }
        let rg = self.any_grad(&[a]);
        Ok(self.push(Op::Gather { input: a, ids: ids.to_vec() }, Tensor::matrix(ids.len(), cols, data)?, rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        if self.shape(a).len() != 2 {
            return Err(TensorError::Shape {
                op: "transpose",
                shapes: self.shapes(&[a]),
            });
        }
        let (m, n) = self.dims2(a);
        let t = self.value(a).data();
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = t[i * n + j];
            }
        }
        let rg = self.any_grad(&[a]);
        Ok(self.push(Op::Transpose(a), Tensor::matrix(n, m, data)?, rg))
    }

    /// Softmax over the columns of each row.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        if self.shape(a).len() != 2 {
            return Err(TensorError::Shape {
                op: "softmax_rows",
                shapes: self.shapes(&[a]),
            });
        }
        let (m, n) = self.dims2(a);
        let mut data = self.value(a).data().to_vec();
        for row in data.chunks_mut(n) {
            softmax_in_place(row);
        }
        let rg = self.any_grad(&[a]);
        Ok(self.push(Op::SoftmaxRows(a), Tensor::matrix(m, n, data)?, rg))
    }

    /// Sum over rows of `-log softmax(logits[r])[golds[r]]`, as a `[1]` scalar.
    pub fn cross_entropy(&mut self, logits: Var, golds: &[usize]) -> Result<Var> {
        if self.shape(logits).len() != 2 || self.shape(logits)[0] != golds.len() {
            return Err(TensorError::Shape {
                op: "cross_entropy",
                shapes: vec![self.shape(logits).to_vec(), vec![golds.len()]],
            });
        }
        let (_, k) = self.dims2(logits);
        if let Some(&bad) = golds.iter().find(|&&g| g >= k) {
            return Err(TensorError::IndexOutOfRange {
                op: "cross_entropy",
                index: bad,
                bound: k,
            });
        }
        let mut probs = self.value(logits).data().to_vec();
        let mut loss = 0.0;
        for (row, &g) in probs.chunks_mut(k).zip(golds) {
            let logit = row[g];
            let (max, lse) = softmax_in_place(row);
            loss += lse - (logit - max);
        }
        let rg = self.any_grad(&[logits]);
        Ok(self.push(
            Op::CrossEntropy {
                logits,
                golds: golds.to_vec(),
                probs,
            },
            Tensor::scalar(loss),
            rg,
        ))
    }

    /// Reverse sweep from the scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.backward_done {
            return Err(TensorError::BackwardTwice);
        }
        if self.value(loss).len() != 1 {
            return Err(TensorError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        self.backward_done = true;

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(gout) = grads[idx].take() else {
                continue;
            };
            self.backprop_node(idx, &gout, &mut grads);
            // Keep leaf gradients for the caller.
            if matches!(self.nodes[idx].op, Op::Leaf | Op::Param(_)) {
                grads[idx] = Some(gout);
            }
        }

        let mut params = Vec::new();
        let mut leaves = Vec::new();
        for (idx, g) in grads.into_iter().enumerate() {
            let Some(g) = g else { continue };
            match self.nodes[idx].op {
                Op::Param(id) => {
                    let shape = self.value(Var(idx)).shape().to_vec();
                    params.push((id, Tensor { shape, data: g }));
                }
                Op::Leaf => {
                    let shape = self.value(Var(idx)).shape().to_vec();
                    leaves.push((Var(idx), Tensor { shape, data: g }));
                }
                _ => {}
            }
        }
        params.sort_by_key(|(id, _)| *id);
        Ok(Gradients { params, leaves })
    }

    fn backprop_node(&self, idx: usize, gout: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let out = node.value.as_ref();
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims2(*a);
                let n = self.value(*b).cols();
                if self.requires_grad(*a) {
                    // dA = dC B^T
                    let bv = self.value(*b).data();
                    let ga = grad_slot(grads, *a, m * k);
                    for i in 0..m {
                        let grow = &gout[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bv[p * n..(p + 1) * n];
                            ga[i * k + p] += dot(grow, brow);
                        }
                    }
                }
                if self.requires_grad(*b) {
                    // dB = A^T dC
                    let av = self.value(*a).data();
                    let gb = grad_slot(grads, *b, k * n);
                    for i in 0..m {
                        let grow = &gout[i * n..(i + 1) * n];
                        for p in 0..k {
                            let aip = av[i * k + p];
                            if aip != 0.0 {
                                axpy(aip, grow, &mut gb[p * n..(p + 1) * n]);
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.requires_grad(v) {
                        add_into(grad_slot(grads, v, gout.len()), gout);
                    }
                }
            }
            Op::AddBias(x, bias) => {
                if self.requires_grad(*x) {
                    add_into(grad_slot(grads, *x, gout.len()), gout);
                }
                if self.requires_grad(*bias) {
                    let n = self.value(*bias).len();
                    let gb = grad_slot(grads, *bias, n);
                    for row in gout.chunks(n) {
                        add_into(gb, row);
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.requires_grad(*a) {
                    let bv = self.value(*b).data();
                    let ga = grad_slot(grads, *a, gout.len());
                    for ((g, &go), &y) in ga.iter_mut().zip(gout).zip(bv) {
                        *g += go * y;
                    }
                }
                if self.requires_grad(*b) {
                    let av = self.value(*a).data();
                    let gb = grad_slot(grads, *b, gout.len());
                    for ((g, &go), &x) in gb.iter_mut().zip(gout).zip(av) {
                        *g += go * x;
                    }
                }
            }
            Op::Scale(a, c) => {
                let ga = grad_slot(grads, *a, gout.len());
                for (g, &go) in ga.iter_mut().zip(gout) {
                    *g += go * c;
                }
            }
            Op::Sigmoid(a) => {
                let y = out.unwrap().data();
                let ga = grad_slot(grads, *a, gout.len());
                for ((g, &go), &s) in ga.iter_mut().zip(gout).zip(y) {
                    *g += go * s * (1.0 - s);
                }
            }
            Op::Tanh(a) => {
                let y = out.unwrap().data();
                let ga = grad_slot(grads, *a, gout.len());
                for ((g, &go), &t) in ga.iter_mut().zip(gout).zip(y) {
                    *g += go * (1.0 - t * t);
                }
            }
            Op::Elu(a) => {
                let y = out.unwrap().data();
                let x = self.value(*a).data();
                let ga = grad_slot(grads, *a, gout.len());
                for (((g, &go), &yv), &xv) in ga.iter_mut().zip(gout).zip(y).zip(x) {
                    *g += go * if xv > 0.0 { 1.0 } else { yv + 1.0 };
                }
            }
            Op::Sum(a) => {
                let n = self.value(*a).len();
                let ga = grad_slot(grads, *a, n);
                for g in ga.iter_mut() {
                    *g += gout[0];
                }
            }
            Op::Concat { inputs, axis } => {
                let ndim = out.unwrap().shape().len();
                if ndim == 1 || *axis == 0 {
                    let mut offset = 0;
                    for &v in inputs {
                        let n = self.value(v).len();
                        if self.requires_grad(v) {
                            add_into(grad_slot(grads, v, n), &gout[offset..offset + n]);
                        }
                        offset += n;
                    }
                } else {
                    let total_cols = out.unwrap().cols();
                    let rows = out.unwrap().rows();
                    let mut col_offset = 0;
                    for &v in inputs {
                        let c = self.value(v).cols();
                        if self.requires_grad(v) {
                            let gv = grad_slot(grads, v, rows * c);
                            for r in 0..rows {
                                add_into(
                                    &mut gv[r * c..(r + 1) * c],
                                    &gout[r * total_cols + col_offset..r * total_cols + col_offset + c],
                                );
                            }
                        }
                        col_offset += c;
                    }
                }
            }
            Op::Slice { input, axis, start } => {
                let src = self.value(*input);
                let n = src.len();
                let ga = grad_slot(grads, *input, n);
                if *axis == 0 {
                    let inner: usize = src.shape()[1..].iter().product();
                    add_into(&mut ga[start * inner..start * inner + gout.len()], gout);
                } else {
                    let cols = src.cols();
                    let width = out.unwrap().cols();
                    for (r, grow) in gout.chunks(width).enumerate() {
                        add_into(&mut ga[r * cols + start..r * cols + start + width], grow);
                    }
                }
            }
            Op::Gather { input, ids } => {
                let src = self.value(*input);
                let cols = src.cols();
                let ga = grad_slot(grads, *input, src.len());
                for (grow, &i) in gout.chunks(cols).zip(ids) {
                    add_into(&mut ga[i * cols..(i + 1) * cols], grow);
                }
            }
            Op::Transpose(a) => {
                let (m, n) = self.dims2(*a);
                let ga = grad_slot(grads, *a, m * n);
                for i in 0..m {
                    for j in 0..n {
                        ga[i * n + j] += gout[j * m + i];
                    }
                }
            }
            Op::SoftmaxRows(a) => {
                let y = out.unwrap();
                let n = y.cols();
                let ga = grad_slot(grads, *a, y.len());
                for ((grow, yrow), garow) in gout.chunks(n).zip(y.data().chunks(n)).zip(ga.chunks_mut(n)) {
                    let s = dot(grow, yrow);
                    for ((g, &go), &yv) in garow.iter_mut().zip(grow).zip(yrow) {
                        *g += yv * (go - s);
                    }
                }
            }
            Op::CrossEntropy { logits, golds, probs } => {
                let k = self.value(*logits).cols();
                let ga = grad_slot(grads, *logits, probs.len());
                for (r, &gold) in golds.iter().enumerate() {
                    for c in 0..k {
                        let target = if c == gold { 1.0 } else { 0.0 };
                        ga[r * k + c] += gout[0] * (probs[r * k + c] - target);
                    }
                }
            }
        }
    }
}

/// Gradients produced by one backward pass.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    params: Vec<(ParamId, Tensor)>,
    leaves: Vec<(Var, Tensor)>,
}

impl Gradients {
    /// Parameter gradients, sorted by id. Parameters the loss does not reach are absent.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.params.iter().map(|(id, t)| (*id, t))
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.binary_search_by_key(&id, |(i, _)| *i).ok().map(|i| &self.params[i].1)
    }

    /// Gradient of a non-parameter leaf created with `requires_grad = true`.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.leaves.iter().find(|(l, _)| *l == v).map(|(_, t)| t)
    }
}

fn grad_slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

#[inline]
fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip != 0.0 {
                axpy(aip, &b[p * n..(p + 1) * n], orow);
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

/// Replaces `row` with its softmax and returns `(max, ln z)` where
/// `z` is the partition function of the max-shifted row.
fn softmax_in_place(row: &mut [f64]) -> (f64, f64) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        z += *v;
    }
    for v in row.iter_mut() {
        *v /= z;
    }
    (max, z.ln())
}
