//! Synchronous training of the character, word and meta models, and the
//! joint single-loss alternative.

pub mod adam;
pub mod checkpoint;
pub mod config;

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;

use crate::data::EncodedSentence;
use crate::error::{Error, Result};
use crate::model::{sentence_loss, Part, TaggerModel};
use crate::nn::{ModelRng, Phase};
use crate::tensor::{Gradients, Graph, ParamStore, Var};

pub use adam::Adam;
pub use checkpoint::Checkpoint;
pub use config::{AdamConfig, CharModel, Components, Optimization, TrainConfig};

/// One training-log record.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean batch loss of each pass, in `Part::ALL` order; `None` when the
    /// pass did not run.
    pub losses: [Option<f64>; 3],
    /// Mean batch loss of the summed objective in joint mode.
    pub joint_loss: Option<f64>,
    pub train_accuracy: Option<f64>,
    pub dev_accuracy: f64,
    pub improved: bool,
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "epoch={}", self.epoch)?;
        for (part, loss) in Part::ALL.iter().zip(&self.losses) {
            if let Some(l) = loss {
                write!(f, " {}_loss={l:.6}", part.name())?;
            }
        }
        if let Some(l) = self.joint_loss {
            write!(f, " joint_loss={l:.6}")?;
        }
        if let Some(a) = self.train_accuracy {
            write!(f, " train_acc={a:.6}")?;
        }
        write!(f, " dev_acc={:.6}", self.dev_accuracy)?;
        if self.improved {
            f.write_str(" best")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
}

/// The model whose predictions select the best epoch and tag new text.
pub fn selection_part(config: &TrainConfig) -> Part {
    match config.components {
        Components::All => Part::Meta,
        Components::CharOnly => Part::Char,
    }
}

/// Token accuracy of one model over `data`. Tokens whose gold tag is
/// unknown to the model count as errors.
pub fn accuracy(model: &TaggerModel, data: &[EncodedSentence], part: Part) -> Result<f64> {
    let (mut correct, mut total) = (0usize, 0usize);
    for s in data {
        let pred = model.predict_part(s, part)?;
        total += s.len();
        correct += pred.iter().zip(&s.tags).filter(|(p, g)| Some(**p) == **g).count();
    }
    Ok(if total == 0 { 0.0 } else { correct as f64 / total as f64 })
}

/// Random streams of one training run, all derived from the config seed.
struct RunRng {
    shuffle: ModelRng,
    dropout: Phase,
}

impl RunRng {
    fn new(seed: u64) -> Self {
        let mut shuffle = ModelRng::seed_from_u64(seed);
        shuffle.set_stream(1);
        let mut dropout = ModelRng::seed_from_u64(seed);
        dropout.set_stream(2);
        RunRng {
            shuffle,
            dropout: Phase::train(dropout),
        }
    }

    fn batches(&mut self, n: usize, size: usize) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut self.shuffle);
        order.chunks(size).map(<[usize]>::to_vec).collect()
    }
}

fn mean_of(g: &mut Graph<'_>, losses: &[Var]) -> Result<Option<Var>> {
    let Some((&first, rest)) = losses.split_first() else {
        return Ok(None);
    };
    let mut total = first;
    for &l in rest {
        total = g.add(total, l)?;
    }
    Ok(Some(g.scale(total, 1.0 / losses.len() as f64)))
}

/// Loss of one model on one sentence, as used by the separate passes.
/// The meta pass runs the encoders without dropout and detached.
pub fn part_loss(g: &mut Graph<'_>, model: &TaggerModel, s: &EncodedSentence, part: Part, phase: &mut Phase) -> Result<Option<Var>> {
    let logits = match part {
        Part::Char => model.encode_char(g, s, phase)?.logits,
        Part::Word => model.encode_word(g, s, phase)?.logits,
        Part::Meta => model.forward(g, s, phase, false, true)?.meta.logits,
    };
    sentence_loss(g, logits, s)
}

/// Summed char + word + meta loss with gradient flowing through the encoders.
pub fn joint_loss(g: &mut Graph<'_>, model: &TaggerModel, s: &EncodedSentence, phase: &mut Phase) -> Result<Option<Var>> {
    let out = model.forward(g, s, phase, true, false)?;
    let mut parts = Vec::with_capacity(3);
    for logits in [out.char.logits, out.word.logits, out.meta.logits] {
        if let Some(l) = sentence_loss(g, logits, s)? {
            parts.push(l);
        }
    }
    let Some((&first, rest)) = parts.split_first() else {
        return Ok(None);
    };
    let mut total = first;
    for &l in rest {
        total = g.add(total, l)?;
    }
    Ok(Some(total))
}

/// Backward pass of one batch; returns the batch loss and the gradients.
fn batch_gradients<F>(store: &ParamStore, batch: &[usize], mut loss_of: F) -> Result<Option<(f64, Gradients)>>
where
    F: for<'g> FnMut(&mut Graph<'g>, usize) -> Result<Option<Var>>,
{
    let mut g = Graph::with_params(store);
    let mut losses = Vec::with_capacity(batch.len());
    for &i in batch {
        if let Some(l) = loss_of(&mut g, i)? {
            losses.push(l);
        }
    }
    let Some(loss) = mean_of(&mut g, &losses)? else {
        return Ok(None);
    };
    let value = g.value(loss).item();
    Ok(Some((value, g.backward(loss)?)))
}

/// One full pass of one model over the training data with its own optimizer.
pub fn train_pass(
    model: &mut TaggerModel,
    opt: &mut Adam,
    data: &[EncodedSentence],
    part: Part,
    batches: &[Vec<usize>],
    phase: &mut Phase,
) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for batch in batches {
        let store = &model.store;
        let m = &*model;
        let result = batch_gradients(store, batch, |g, i| part_loss(g, m, &data[i], part, phase))?;
        if let Some((loss, grads)) = result {
            opt.step(&mut model.store, &grads)?;
            sum += loss;
            count += 1;
        }
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

/// One synchronous epoch: a character pass, a word pass, then a meta pass,
/// each over the whole shuffled training set. Returns the mean batch losses.
pub fn train_epoch_synchronous(
    model: &mut TaggerModel,
    optimizers: &mut [Adam; 3],
    data: &[EncodedSentence],
    parts: &[Part],
    rng: &mut (impl rand::Rng + ?Sized),
    phase: &mut Phase,
) -> Result<[Option<f64>; 3]> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty training corpus".into()));
    }
    let mut losses = [None; 3];
    for &part in parts {
        let k = Part::ALL.iter().position(|&p| p == part).expect("known part");
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(rng);
        let batches: Vec<Vec<usize>> = order.chunks(model.config.batch_size).map(<[usize]>::to_vec).collect();
        losses[k] = Some(train_pass(model, &mut optimizers[k], data, part, &batches, phase)?);
    }
    Ok(losses)
}

fn joint_epoch(model: &mut TaggerModel, opt: &mut Adam, data: &[EncodedSentence], rngs: &mut RunRng) -> Result<f64> {
    let batches = rngs.batches(data.len(), model.config.batch_size);
    let mut sum = 0.0;
    let mut count = 0usize;
    for batch in &batches {
        let m = &*model;
        let phase = &mut rngs.dropout;
        let result = batch_gradients(&m.store, batch, |g, i| joint_loss(g, m, &data[i], phase))?;
        if let Some((loss, grads)) = result {
            opt.step(&mut model.store, &grads)?;
            sum += loss;
            count += 1;
        }
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

/// Trains `model` for up to `max_epochs` epochs and keeps the parameters
/// with the best dev accuracy (the untrained model counts as epoch 0).
/// `on_epoch` sees every log record as it is produced.
pub fn train(
    mut model: TaggerModel,
    train_data: &[EncodedSentence],
    dev_data: &[EncodedSentence],
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    if train_data.is_empty() || dev_data.is_empty() {
        return Err(Error::InvalidArgument("training and dev corpora must be non-empty".into()));
    }
    model.config.validate()?;
    let cfg = model.config.clone();
    let select = selection_part(&cfg);
    let parts: Vec<Part> = match cfg.components {
        Components::All => Part::ALL.to_vec(),
        Components::CharOnly => vec![Part::Char],
    };
    let mut rngs = RunRng::new(cfg.seed);
    let mut separate = Part::ALL.map(|p| Adam::new(cfg.adam.clone(), &model.store, model.param_ids(p)));
    let all_ids: Vec<_> = Part::ALL.iter().flat_map(|&p| model.param_ids(p)).collect();
    let mut joint = Adam::new(cfg.adam.clone(), &model.store, all_ids);

    let dev_eval = |m: &TaggerModel, epoch: usize| {
        accuracy(m, dev_data, select).map_err(|e| Error::InvalidArgument(format!("dev evaluation after epoch {epoch}: {e}")))
    };
    let initial = dev_eval(&model, 0)?;
    let mut log = vec![EpochLog {
        epoch: 0,
        losses: [None; 3],
        joint_loss: None,
        train_accuracy: None,
        dev_accuracy: initial,
        improved: true,
    }];
    on_epoch(&log[0]);
    let mut best = (initial, 0usize, model.store.clone());
    let mut since_best = 0usize;

    for epoch in 1..=cfg.max_epochs {
        let (losses, joint_loss) = match cfg.optimization {
            Optimization::Separate => {
                let losses = train_epoch_synchronous(&mut model, &mut separate, train_data, &parts, &mut rngs.shuffle, &mut rngs.dropout)?;
                (losses, None)
            }
            Optimization::Joint => ([None; 3], Some(joint_epoch(&mut model, &mut joint, train_data, &mut rngs)?)),
        };
        let train_accuracy = if cfg.target_train_accuracy > 0.0 {
            Some(accuracy(&model, train_data, select)?)
        } else {
            None
        };
        let dev_accuracy = dev_eval(&model, epoch)?;
        let improved = dev_accuracy > best.0;
        if improved {
            best = (dev_accuracy, epoch, model.store.clone());
            since_best = 0;
        } else {
            since_best += 1;
        }
        let record = EpochLog {
            epoch,
            losses,
            joint_loss,
            train_accuracy,
            dev_accuracy,
            improved,
        };
        on_epoch(&record);
        log.push(record);
        if cfg.patience > 0 && since_best >= cfg.patience {
            break;
        }
        if train_accuracy.is_some_and(|a| a >= cfg.target_train_accuracy) {
            break;
        }
    }

    let (best_dev_accuracy, best_epoch, store) = best;
    model.store = store;
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            model,
            best_dev_accuracy,
            best_epoch,
        },
        log,
    })
}
