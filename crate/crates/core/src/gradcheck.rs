//! Central finite-difference check of analytic gradients.

use rand::SeedableRng;

use crate::data::{build_vocabs, EncodedSentence, Sentence, Task};
use crate::error::{Error, Result};
use crate::model::{Part, TaggerModel};
use crate::nn::{
    char_attention, dropout, embedding_lookup, lstm_run, lstm_step, BiLstmStack, ClassifierParams, DropoutMode, GaussianScale, LstmDropout,
    LstmParams, MlpParams, ModelRng, Phase,
};
use crate::tensor::{Graph, Init, ParamId, ParamStore, Tensor, TensorError, Var};
use crate::training::config::{EmbeddingInit, TrainConfig};
use crate::training::{joint_loss, part_loss};

type LayerCheck = (&'static str, Vec<ParamId>, Box<dyn Fn(&mut Graph<'_>) -> Result<Var>>);

fn evaluate<F>(store: &ParamStore, f: &F) -> Result<f64>
where
    F: for<'g> Fn(&mut Graph<'g>) -> Result<Var>,
{
    let mut g = Graph::with_params(store);
    let loss = f(&mut g)?;
    Ok(g.value(loss).item())
}

/// Largest relative error `|a - n| / max(1, |a|, |n|)` between the analytic
/// gradient `a` and the central difference `n` over every entry of `ids`.
///
/// `f` must build the same deterministic scalar loss each time it is called.
pub fn grad_check<F>(store: &mut ParamStore, ids: &[ParamId], eps: f64, f: F) -> Result<f64>
where
    F: for<'g> Fn(&mut Graph<'g>) -> Result<Var>,
{
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    let analytic: Vec<Vec<f64>> = {
        let mut g = Graph::with_params(store);
        let loss = f(&mut g)?;
        let value = g.value(loss).item();
        if !value.is_finite() {
            return Err(TensorError::NonFinite("loss".into()).into());
        }
        let grads = g.backward(loss)?;
        ids.iter()
            .map(|&id| match grads.param(id) {
                Some(t) => t.data().to_vec(),
                None => vec![0.0; store.value(id).len()],
            })
            .collect()
    };

    let mut worst: f64 = 0.0;
    for (&id, grad) in ids.iter().zip(&analytic) {
        for (k, &a) in grad.iter().enumerate() {
            let orig = store.value(id).data()[k];
            store.value_mut(id).data_mut()[k] = orig + eps;
            let plus = evaluate(store, &f);
            store.value_mut(id).data_mut()[k] = orig - eps;
            let minus = evaluate(store, &f);
            store.value_mut(id).data_mut()[k] = orig;
            let (plus, minus) = (plus?, minus?);
            let numeric = (plus - minus) / (2.0 * eps);
            if !a.is_finite() || !numeric.is_finite() {
                let name = &store.get(id).name;
                return Err(TensorError::NonFinite(format!("{name}[{k}]")).into());
            }
            let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

/// Worst relative gradient error per check of [`suite`].
#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_error: f64,
}

/// Random-weighted sum of `v`, so every output entry gets a distinct upstream gradient.
fn probe(g: &mut Graph<'_>, v: Var, seed: u64) -> Result<Var> {
    let shape = g.shape(v).to_vec();
    let mut rng = ModelRng::seed_from_u64(seed);
    let w = Tensor::create(&shape, Init::Uniform { limit: 1.0 }, &mut rng)?;
    let w = g.constant(w);
    let m = g.mul(v, w)?;
    Ok(g.sum(m))
}

fn uniform(store: &mut ParamStore, name: &str, shape: &[usize], rng: &mut ModelRng) -> Result<ParamId> {
    Ok(store.add(name, Tensor::create(shape, Init::Uniform { limit: 1.0 }, rng)?, true))
}

fn tiny_model() -> Result<(TaggerModel, Vec<EncodedSentence>)> {
    let corpus = [
        Sentence::from_tagged(&[("I", "PRP"), ("had", "VBD"), ("shingles", "NNS")], Task::Xpos),
        Sentence::from_tagged(&[("a", "DT"), ("x", "NN")], Task::Xpos),
    ];
    let vocabs = build_vocabs(&corpus, Task::Xpos, 1, false)?;
    let data = vocabs.encode_all(&corpus)?;
    let mut cfg = TrainConfig::default().scaled(3);
    cfg.model.char_lstm_layers = 2;
    cfg.model.word_lstm_layers = 2;
    cfg.model.mlp_size = 4;
    cfg.init.gaussian_scale = GaussianScale::FanIn;
    cfg.init.word_embeddings = EmbeddingInit::Gaussian;
    let mut rng = ModelRng::seed_from_u64(11);
    let pretrained = Tensor::create(&[vocabs.words.len(), 3], Init::Uniform { limit: 0.5 }, &mut rng)?;
    Ok((TaggerModel::new(cfg, vocabs, Some(pretrained))?, data))
}

/// Gradient checks of every differentiable primitive and layer, and of one
/// full character, word, meta and joint loss on a two-sentence fixture with
/// dropout active (masks replayed from a fixed seed).
pub fn suite(eps: f64) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    let mut rng = ModelRng::seed_from_u64(2024);
    let mut store = ParamStore::new();
    let a = uniform(&mut store, "a", &[3, 4], &mut rng)?;
    let b = uniform(&mut store, "b", &[4, 2], &mut rng)?;
    let c = uniform(&mut store, "c", &[3, 4], &mut rng)?;
    let bias = uniform(&mut store, "bias", &[1, 4], &mut rng)?;
    let col = uniform(&mut store, "col", &[4, 1], &mut rng)?;
    let ids = [a, b, c, bias, col];

    type Op = fn(&mut Graph<'_>, [Var; 5]) -> Result<Var>;
    let ops: Vec<(&str, Op)> = vec![
        ("matmul", |g, [a, b, ..]| Ok(g.matmul(a, b)?)),
        ("add", |g, [a, _, c, ..]| Ok(g.add(a, c)?)),
        ("add_bias", |g, [a, _, _, bias, _]| Ok(g.add_bias(a, bias)?)),
        ("mul", |g, [a, _, c, ..]| Ok(g.mul(a, c)?)),
        ("scale", |g, [a, ..]| Ok(g.scale(a, -1.7))),
        ("sigmoid", |g, [a, ..]| Ok(g.sigmoid(a))),
        ("tanh", |g, [a, ..]| Ok(g.tanh(a))),
        ("elu", |g, [a, ..]| Ok(g.elu(a))),
        ("sum", |g, [a, ..]| {
            let s = g.sum(a);
            Ok(g.mul(s, s)?)
        }),
        ("concat_rows", |g, [a, _, c, ..]| Ok(g.concat(&[a, c], 0)?)),
        ("concat_cols", |g, [a, _, c, ..]| Ok(g.concat(&[a, c], 1)?)),
        ("matmul_column", |g, [a, _, _, _, col]| Ok(g.matmul(a, col)?)),
        ("slice", |g, [a, ..]| Ok(g.slice(a, 1, 1..3)?)),
        ("gather_rows", |g, [a, ..]| Ok(g.gather_rows(a, &[2, 0, 2])?)),
        ("transpose", |g, [a, ..]| Ok(g.transpose(a)?)),
        ("softmax_rows", |g, [a, ..]| Ok(g.softmax_rows(a)?)),
        ("cross_entropy", |g, [a, ..]| Ok(g.cross_entropy(a, &[1, 3, 0])?)),
    ];
    for (name, op) in ops {
        let err = grad_check(&mut store, &ids, eps, |g| {
            let vars = [g.param(a)?, g.param(b)?, g.param(c)?, g.param(bias)?, g.param(col)?];
            let y = op(g, vars)?;
            probe(g, y, 7)
        })?;
        out.push(CheckResult {
            name: name.to_string(),
            max_rel_error: err,
        });
    }

    // Layers.
    let mut store = ParamStore::new();
    let table = uniform(&mut store, "table", &[5, 3], &mut rng)?;
    let lstm = LstmParams::new(&mut store, "lstm", 3, 4, &mut rng)?;
    for id in [lstm.h0, lstm.c0, lstm.b] {
        let t = Tensor::create(store.value(id).shape(), Init::Uniform { limit: 0.5 }, &mut rng)?;
        *store.value_mut(id) = t;
    }
    let stack = BiLstmStack::new(&mut store, "stack", 3, 2, 2, &mut rng)?;
    let mlp = MlpParams::new(&mut store, "mlp", 3, 4, GaussianScale::FanIn, &mut rng)?;
    let clf = ClassifierParams::new(&mut store, "clf", 4, 3, &mut rng)?;
    let score = uniform(&mut store, "score", &[4, 1], &mut rng)?;
    let ids_of = |v: Vec<ParamId>| -> Vec<ParamId> { std::iter::once(table).chain(v).collect() };
    let seq = [1usize, 3, 0, 4, 3];

    let lstm_ids = ids_of(lstm.param_ids());
    let checks: Vec<LayerCheck> = vec![
        (
            "embedding_lookup",
            vec![table],
            Box::new(move |g| {
                let x = embedding_lookup(g, table, &seq)?;
                probe(g, x, 1)
            }),
        ),
        (
            "lstm_step",
            lstm_ids.clone(),
            Box::new({
                let lstm = lstm.clone();
                move |g| {
                    let x = embedding_lookup(g, table, &[2])?;
                    let h = g.param(lstm.h0)?;
                    let c = g.param(lstm.c0)?;
                    let (h, c) = lstm_step(g, &lstm, x, h, c)?;
                    let hc = g.concat(&[h, c], 1)?;
                    probe(g, hc, 2)
                }
            }),
        ),
        (
            "lstm_forward",
            lstm_ids.clone(),
            Box::new({
                let lstm = lstm.clone();
                move |g| {
                    let x = embedding_lookup(g, table, &seq)?;
                    let y = lstm_run(g, &lstm, x, false, 0.0, &mut Phase::infer())?;
                    probe(g, y, 3)
                }
            }),
        ),
        (
            "lstm_reverse_state_dropout",
            lstm_ids,
            Box::new({
                let lstm = lstm.clone();
                move |g| {
                    let x = embedding_lookup(g, table, &seq)?;
                    let y = lstm_run(g, &lstm, x, true, 0.3, &mut Phase::train_seeded(5))?;
                    probe(g, y, 4)
                }
            }),
        ),
        (
            "bilstm_stack",
            ids_of(stack.param_ids()),
            Box::new({
                let stack = stack.clone();
                move |g| {
                    let x = embedding_lookup(g, table, &seq)?;
                    let drop = LstmDropout {
                        input: 0.25,
                        state: 0.25,
                        first_layer_input: true,
                    };
                    let o = stack.run(g, x, drop, &mut Phase::train_seeded(6))?;
                    let y = g.concat(&[o.forward, o.backward], 1)?;
                    probe(g, y, 5)
                }
            }),
        ),
        (
            "mlp_classifier_xent",
            ids_of([mlp.param_ids(), clf.param_ids()].concat()),
            Box::new({
                let (mlp, clf) = (mlp.clone(), clf.clone());
                move |g| {
                    let x = embedding_lookup(g, table, &seq)?;
                    let x = dropout(g, x, 0.4, DropoutMode::PerPosition, &mut Phase::train_seeded(7))?;
                    let h = mlp.apply(g, x)?;
                    let logits = clf.logits(g, h)?;
                    Ok(g.cross_entropy(logits, &[0, 2, 1, 1, 0])?)
                }
            }),
        ),
        (
            "char_attention",
            ids_of([lstm.param_ids(), vec![score]].concat()),
            Box::new({
                let lstm = lstm.clone();
                move |g| {
                    let x = embedding_lookup(g, table, &seq)?;
                    let states = lstm_run(g, &lstm, x, false, 0.0, &mut Phase::infer())?;
                    let s = g.param(score)?;
                    let rep = char_attention(g, states, s)?;
                    probe(g, rep, 8)
                }
            }),
        ),
    ];
    for (name, ids, f) in checks {
        let err = grad_check(&mut store, &ids, eps, |g| f(g))?;
        out.push(CheckResult {
            name: name.to_string(),
            max_rel_error: err,
        });
    }

    // Whole model on the two-sentence fixture.
    let (mut model, data) = tiny_model()?;
    let parts = [("char_loss", Part::Char), ("word_loss", Part::Word), ("meta_loss", Part::Meta)];
    let arch = model.clone();
    for (name, part) in parts {
        let ids = model.param_ids(part);
        let err = grad_check(&mut model.store, &ids, eps, |g| {
            let mut phase = Phase::train_seeded(9);
            let mut total: Option<Var> = None;
            for s in &data {
                if let Some(l) = part_loss(g, &arch, s, part, &mut phase)? {
                    total = Some(match total {
                        Some(t) => g.add(t, l)?,
                        None => l,
                    });
                }
            }
            total.ok_or(Error::EmptySequence("fixture"))
        })?;
        out.push(CheckResult {
            name: name.to_string(),
            max_rel_error: err,
        });
    }
    let all: Vec<ParamId> = Part::ALL.iter().flat_map(|&p| model.param_ids(p)).collect();
    let err = grad_check(&mut model.store, &all, eps, |g| {
        let mut phase = Phase::train_seeded(10);
        let mut total: Option<Var> = None;
        for s in &data {
            if let Some(l) = joint_loss(g, &arch, s, &mut phase)? {
                total = Some(match total {
                    Some(t) => g.add(t, l)?,
                    None => l,
                });
            }
        }
        total.ok_or(Error::EmptySequence("fixture"))
    })?;
    out.push(CheckResult {
        name: "joint_loss".into(),
        max_rel_error: err,
    });
    Ok(out)
}
