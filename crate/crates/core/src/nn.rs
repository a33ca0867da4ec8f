//! Layers built on the differentiation graph: embeddings, dropout,
//! LSTM/BiLSTM stacks, the ELU MLP, the linear classifier, softmax
//! cross-entropy and the token-internal character attention.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Init, ParamId, ParamStore, Tensor, Var};

pub type ModelRng = ChaCha8Rng;

/// Training or inference. Training carries the RNG that draws dropout masks.
pub struct Phase {
    training: bool,
    rng: ModelRng,
}

impl Phase {
    pub fn train(rng: ModelRng) -> Self {
        Phase { training: true, rng }
    }

    pub fn train_seeded(seed: u64) -> Self {
        Self::train(ModelRng::seed_from_u64(seed))
    }

    pub fn infer() -> Self {
        Phase {
            training: false,
            rng: ModelRng::seed_from_u64(0),
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn rng(&mut self) -> &mut ModelRng {
        &mut self.rng
    }
}

/// How the Gaussian initialisation of MLP weights and character embeddings is scaled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GaussianScale {
    /// Mean 0, variance 1.
    Unit,
    /// Mean 0, variance `1 / fan_in`.
    FanIn,
}

impl GaussianScale {
    pub fn variance(self, fan_in: usize) -> f64 {
        match self {
            GaussianScale::Unit => 1.0,
            GaussianScale::FanIn => 1.0 / fan_in.max(1) as f64,
        }
    }
}

fn glorot(fan_in: usize, fan_out: usize) -> Init {
    Init::Uniform {
        limit: (6.0 / (fan_in + fan_out) as f64).sqrt(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DropoutMode {
    /// One mask over the feature axis, shared by every row (sequence position).
    SingleMask,
    /// An independent draw per entry.
    PerPosition,
}

/// Inverted dropout. Identity when `rate == 0` or outside training.
pub fn dropout(g: &mut Graph<'_>, x: Var, rate: f64, mode: DropoutMode, phase: &mut Phase) -> Result<Var> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!("dropout rate {rate} outside [0, 1)")));
    }
    if rate == 0.0 || !phase.training {
        return Ok(x);
    }
    let shape = g.shape(x).to_vec();
    let cols = *shape.last().unwrap();
    let keep = 1.0 / (1.0 - rate);
    let draw = |rng: &mut ModelRng| if rng.random::<f64>() < rate { 0.0 } else { keep };
    let mask: Vec<f64> = match mode {
        DropoutMode::SingleMask => {
            let row: Vec<f64> = (0..cols).map(|_| draw(&mut phase.rng)).collect();
            let rows: usize = shape.iter().product::<usize>() / cols.max(1);
            row.iter().cycle().take(rows * cols).copied().collect()
        }
        DropoutMode::PerPosition => (0..shape.iter().product()).map(|_| draw(&mut phase.rng)).collect(),
    };
    let mask = g.constant(Tensor::new(shape, mask)?);
    Ok(g.mul(x, mask)?)
}

/// Row lookup into an embedding table.
pub fn embedding_lookup(g: &mut Graph<'_>, table: ParamId, ids: &[usize]) -> Result<Var> {
    let t = g.param(table)?;
    Ok(g.gather_rows(t, ids)?)
}

/// Parameters of one unidirectional LSTM. Gate blocks are laid out as
/// `[input | forget | output | candidate]` along the `4 * hidden` axis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LstmParams {
    pub input_size: usize,
    pub hidden_size: usize,
    /// `[input, 4 * hidden]`
    pub w: ParamId,
    /// `[hidden, 4 * hidden]`
    pub u: ParamId,
    /// `[1, 4 * hidden]`
    pub b: ParamId,
    /// Start hidden state, `[1, hidden]`.
    pub h0: ParamId,
    /// Start cell state, `[1, hidden]`.
    pub c0: ParamId,
}

impl LstmParams {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, input_size: usize, hidden_size: usize, rng: &mut R) -> Result<Self> {
        let h4 = 4 * hidden_size;
        let w = Tensor::create(&[input_size, h4], glorot(input_size, h4), rng)?;
        let u = Tensor::create(&[hidden_size, h4], glorot(hidden_size, h4), rng)?;
        Ok(LstmParams {
            input_size,
            hidden_size,
            w: store.add(format!("{name}.w"), w, true),
            u: store.add(format!("{name}.u"), u, true),
            b: store.add(format!("{name}.b"), Tensor::zeros(&[1, h4]), true),
            h0: store.add(format!("{name}.h0"), Tensor::zeros(&[1, hidden_size]), true),
            c0: store.add(format!("{name}.c0"), Tensor::zeros(&[1, hidden_size]), true),
        })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![self.w, self.u, self.b, self.h0, self.c0]
    }
}

fn lstm_cell(g: &mut Graph<'_>, projected: Var, h_in: Var, c_prev: Var, u: Var, hidden: usize) -> Result<(Var, Var)> {
    let rec = g.matmul(h_in, u)?;
    let gates = g.add(projected, rec)?;
    let i = g.slice(gates, 1, 0..hidden)?;
    let f = g.slice(gates, 1, hidden..2 * hidden)?;
    let o = g.slice(gates, 1, 2 * hidden..3 * hidden)?;
    let cand = g.slice(gates, 1, 3 * hidden..4 * hidden)?;
    let i = g.sigmoid(i);
    let f = g.sigmoid(f);
    let o = g.sigmoid(o);
    let cand = g.tanh(cand);
    let keep = g.mul(f, c_prev)?;
    let write = g.mul(i, cand)?;
    let c = g.add(keep, write)?;
    let tc = g.tanh(c);
    let h = g.mul(o, tc)?;
    Ok((h, c))
}

/// One LSTM step on a `[1, input]` row.
pub fn lstm_step(g: &mut Graph<'_>, params: &LstmParams, x: Var, h_prev: Var, c_prev: Var) -> Result<(Var, Var)> {
    if g.shape(x) != [1, params.input_size] || g.shape(h_prev) != [1, params.hidden_size] || g.shape(c_prev) != [1, params.hidden_size] {
        return Err(crate::tensor::TensorError::Shape {
            op: "lstm_step",
            shapes: vec![g.shape(x).to_vec(), g.shape(h_prev).to_vec(), g.shape(c_prev).to_vec()],
        }
        .into());
    }
    let w = g.param(params.w)?;
    let b = g.param(params.b)?;
    let u = g.param(params.u)?;
    let xw = g.matmul(x, w)?;
    let proj = g.add_bias(xw, b)?;
    lstm_cell(g, proj, h_prev, c_prev, u, params.hidden_size)
}

/// Runs `params` over the rows of `inputs` (`[n, input]`), left to right or
/// right to left, starting from the learned `(h0, c0)`. Returns the hidden
/// states `[n, hidden]` in input order.
pub fn lstm_run(g: &mut Graph<'_>, params: &LstmParams, inputs: Var, reverse: bool, state_dropout: f64, phase: &mut Phase) -> Result<Var> {
    let n = g.shape(inputs)[0];
    if n == 0 {
        return Err(Error::EmptySequence("lstm"));
    }
    let hidden = params.hidden_size;
    let w = g.param(params.w)?;
    let b = g.param(params.b)?;
    let u = g.param(params.u)?;
    let xw = g.matmul(inputs, w)?;
    let proj = g.add_bias(xw, b)?;

    // Variational dropout on the recurrent state: one mask per sequence.
    let state_mask = if phase.training && state_dropout > 0.0 {
        let ones = g.constant(Tensor::row(vec![1.0; hidden]));
        let m = dropout(g, ones, state_dropout, DropoutMode::SingleMask, phase)?;
        Some(m)
    } else {
        None
    };

    let mut h = g.param(params.h0)?;
    let mut c = g.param(params.c0)?;
    let mut outputs = vec![h; n];
    let order: Vec<usize> = if reverse { (0..n).rev().collect() } else { (0..n).collect() };
    for t in order {
        let row = g.slice(proj, 0, t..t + 1)?;
        let h_in = match state_mask {
            Some(m) => g.mul(h, m)?,
            None => h,
        };
        let (h_next, c_next) = lstm_cell(g, row, h_in, c, u, hidden)?;
        h = h_next;
        c = c_next;
        outputs[t] = h;
    }
    Ok(g.concat(&outputs, 0)?)
}

/// Dropout applied inside a BiLSTM stack.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LstmDropout {
    /// Rate on each layer's input (single mask per sequence).
    pub input: f64,
    /// Rate on the recurrent hidden state (single mask per sequence).
    pub state: f64,
    /// Whether layer 1 also receives input dropout. Encoders that already
    /// drop their embeddings leave this off.
    pub first_layer_input: bool,
}

impl LstmDropout {
    pub const NONE: LstmDropout = LstmDropout {
        input: 0.0,
        state: 0.0,
        first_layer_input: false,
    };
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BiLstmStack {
    /// `(forward, backward)` per layer.
    pub layers: Vec<(LstmParams, LstmParams)>,
}

/// Top-layer outputs of a BiLSTM stack, each `[n, hidden]`.
#[derive(Debug, Clone, Copy)]
pub struct BiLstmOutput {
    pub forward: Var,
    pub backward: Var,
}

impl BiLstmStack {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, input_size: usize, hidden_size: usize, depth: usize, rng: &mut R) -> Result<Self> {
        if depth == 0 {
            return Err(Error::InvalidArgument(format!("{name}: BiLSTM depth must be at least 1")));
        }
        let mut layers = Vec::with_capacity(depth);
        for l in 0..depth {
            let input = if l == 0 { input_size } else { 2 * hidden_size };
            let f = LstmParams::new(store, &format!("{name}.l{l}.fwd"), input, hidden_size, rng)?;
            let b = LstmParams::new(store, &format!("{name}.l{l}.bwd"), input, hidden_size, rng)?;
            layers.push((f, b));
        }
        Ok(BiLstmStack { layers })
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn hidden_size(&self) -> usize {
        self.layers[0].0.hidden_size
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].0.input_size
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.layers
            .iter()
            .flat_map(|(f, b)| f.param_ids().into_iter().chain(b.param_ids()))
            .collect()
    }

    /// Runs the stack over `inputs` (`[n, input]`, `n >= 1`).
    pub fn run(&self, g: &mut Graph<'_>, inputs: Var, dropout_cfg: LstmDropout, phase: &mut Phase) -> Result<BiLstmOutput> {
        if g.shape(inputs)[0] == 0 {
            return Err(Error::EmptySequence("bilstm_stack_run"));
        }
        let mut x = inputs;
        let mut out = None;
        for (l, (fwd, bwd)) in self.layers.iter().enumerate() {
            if l > 0 || dropout_cfg.first_layer_input {
                x = dropout(g, x, dropout_cfg.input, DropoutMode::SingleMask, phase)?;
            }
            let f = lstm_run(g, fwd, x, false, dropout_cfg.state, phase)?;
            let b = lstm_run(g, bwd, x, true, dropout_cfg.state, phase)?;
            out = Some(BiLstmOutput { forward: f, backward: b });
            if l + 1 < self.layers.len() {
                x = g.concat(&[f, b], 1)?;
            }
        }
        Ok(out.expect("depth >= 1"))
    }
}

/// Single affine layer followed by ELU.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpParams {
    pub input_size: usize,
    pub output_size: usize,
    pub w: ParamId,
    pub b: ParamId,
}

impl MlpParams {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, input_size: usize, output_size: usize, scale: GaussianScale, rng: &mut R) -> Result<Self> {
        let init = Init::Gaussian {
            mean: 0.0,
            variance: scale.variance(input_size),
        };
        let w = Tensor::create(&[input_size, output_size], init, rng)?;
        Ok(MlpParams {
            input_size,
            output_size,
            w: store.add(format!("{name}.w"), w, true),
            b: store.add(format!("{name}.b"), Tensor::zeros(&[1, output_size]), true),
        })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![self.w, self.b]
    }

    /// `elu(x W + b)` over the rows of `x`.
    pub fn apply(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let w = g.param(self.w)?;
        let b = g.param(self.b)?;
        let xw = g.matmul(x, w)?;
        let z = g.add_bias(xw, b)?;
        Ok(g.elu(z))
    }
}

/// Linear map to tag logits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassifierParams {
    pub input_size: usize,
    pub num_tags: usize,
    pub w: ParamId,
    pub b: ParamId,
}

impl ClassifierParams {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, input_size: usize, num_tags: usize, rng: &mut R) -> Result<Self> {
        let w = Tensor::create(&[input_size, num_tags], glorot(input_size, num_tags), rng)?;
        Ok(ClassifierParams {
            input_size,
            num_tags,
            w: store.add(format!("{name}.w"), w, true),
            b: store.add(format!("{name}.b"), Tensor::zeros(&[1, num_tags]), true),
        })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![self.w, self.b]
    }

    pub fn logits(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let w = g.param(self.w)?;
        let b = g.param(self.b)?;
        let xw = g.matmul(x, w)?;
        Ok(g.add_bias(xw, b)?)
    }
}

/// `-log softmax(logits)[gold]` for a `[1, k]` row.
pub fn softmax_xent(g: &mut Graph<'_>, logits: Var, gold: usize) -> Result<Var> {
    Ok(g.cross_entropy(logits, &[gold])?)
}

/// Token representation of the token-internal character model: the
/// attention-weighted sum of the character states (scored by a learned
/// vector) plus the final state. `states` is `[n, hidden]`, `score` is `[hidden, 1]`.
pub fn char_attention(g: &mut Graph<'_>, states: Var, score: Var) -> Result<Var> {
    let n = g.shape(states)[0];
    if n == 0 {
        return Err(Error::EmptySequence("char_attention"));
    }
    let scores = g.matmul(states, score)?;
    let scores = g.transpose(scores)?;
    let weights = g.softmax_rows(scores)?;
    let attended = g.matmul(weights, states)?;
    let last = g.slice(states, 0, n - 1..n)?;
    Ok(g.add(attended, last)?)
}

/// Argmax per row; ties go to the lowest index.
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let k = logits.cols();
    logits
        .data()
        .chunks(k)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}
