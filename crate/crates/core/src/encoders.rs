//! The three token encoders: the sentence-level character BiLSTM, the
//! token-internal character LSTM with attention, and the word BiLSTM.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::EncodedSentence;
use crate::error::{Error, Result};
use crate::nn::{
    char_attention, dropout, embedding_lookup, lstm_run, BiLstmStack, ClassifierParams, DropoutMode, GaussianScale, LstmDropout, LstmParams,
    MlpParams, Phase,
};
use crate::tensor::{Graph, Init, ParamId, ParamStore, Tensor, Var};

/// One of the four character outputs that can be gathered for a token.
/// The derived order is the canonical concatenation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GatherPoint {
    /// Forward output at the token's first character.
    FFirst,
    /// Forward output at the token's last character.
    FLast,
    /// Backward output at the token's first character.
    BFirst,
    /// Backward output at the token's last character.
    BLast,
}

impl GatherPoint {
    pub const ALL: [GatherPoint; 4] = [GatherPoint::FFirst, GatherPoint::FLast, GatherPoint::BFirst, GatherPoint::BLast];

    fn name(self) -> &'static str {
        match self {
            GatherPoint::FFirst => "f-first",
            GatherPoint::FLast => "f-last",
            GatherPoint::BFirst => "b-first",
            GatherPoint::BLast => "b-last",
        }
    }
}

/// Non-empty, canonically ordered subset of [`GatherPoint`]s.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<GatherPoint>", into = "Vec<GatherPoint>")]
pub struct GatherStrategy(Vec<GatherPoint>);

impl GatherStrategy {
    pub fn new(points: &[GatherPoint]) -> Result<Self> {
        let mut v = points.to_vec();
        v.sort_unstable();
        v.dedup();
        if v.is_empty() {
            return Err(Error::InvalidArgument("gather strategy must select at least one output".into()));
        }
        Ok(GatherStrategy(v))
    }

    pub fn all() -> Self {
        GatherStrategy(GatherPoint::ALL.to_vec())
    }

    pub fn points(&self) -> &[GatherPoint] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// The four two-output strategies compared in the gather ablation.
    pub fn ablation_set() -> Vec<GatherStrategy> {
        use GatherPoint::*;
        [[FLast, BFirst], [FFirst, BLast], [FLast, BLast], [FFirst, BFirst]]
            .iter()
            .map(|p| GatherStrategy::new(p).expect("non-empty"))
            .collect()
    }
}

impl TryFrom<Vec<GatherPoint>> for GatherStrategy {
    type Error = Error;
    fn try_from(v: Vec<GatherPoint>) -> Result<Self> {
        GatherStrategy::new(&v)
    }
}

impl From<GatherStrategy> for Vec<GatherPoint> {
    fn from(g: GatherStrategy) -> Self {
        g.0
    }
}

impl fmt::Display for GatherStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.0.iter().map(|p| p.name()).collect();
        f.write_str(&names.join("+"))
    }
}

impl FromStr for GatherStrategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let points = s
            .split(['+', ','])
            .map(|p| {
                GatherPoint::ALL
                    .into_iter()
                    .find(|g| g.name() == p.trim())
                    .ok_or_else(|| Error::InvalidArgument(format!("unknown gather point {p:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        GatherStrategy::new(&points)
    }
}

/// Dropout rates used by an encoder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncoderDropout {
    pub embeddings: f64,
    pub lstm: f64,
    pub mlp: f64,
}

impl EncoderDropout {
    pub const NONE: EncoderDropout = EncoderDropout {
        embeddings: 0.0,
        lstm: 0.0,
        mlp: 0.0,
    };

    fn lstm(&self) -> LstmDropout {
        LstmDropout {
            input: self.lstm,
            state: self.lstm,
            first_layer_input: false,
        }
    }
}

/// Per-token outputs of an encoder for one sentence.
#[derive(Debug, Clone, Copy)]
pub struct EncoderOutput {
    /// Gathered or recurrent representation (`g_i`, the attention
    /// representation, or `o_i`), `[tokens, r]`.
    pub reps: Var,
    /// What the meta model consumes (the MLP output, or `reps` for the
    /// token-internal model), `[tokens, f]`.
    pub features: Var,
    pub logits: Var,
}

fn embedding_table<R: Rng>(store: &mut ParamStore, name: &str, rows: usize, dim: usize, init: Init, rng: &mut R) -> Result<ParamId> {
    let t = Tensor::create(&[rows, dim], init, rng)?;
    Ok(store.add(name, t, true))
}

/// Sentence-level character encoder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CharSentEncoderParams {
    pub embeddings: ParamId,
    pub stack: BiLstmStack,
    pub mlp: MlpParams,
    pub classifier: ClassifierParams,
    pub gather: GatherStrategy,
}

#[allow(clippy::too_many_arguments)]
impl CharSentEncoderParams {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        num_chars: usize,
        embedding_dim: usize,
        embedding_init: Init,
        lstm_size: usize,
        layers: usize,
        mlp_size: usize,
        scale: GaussianScale,
        gather: GatherStrategy,
        num_tags: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let embeddings = embedding_table(store, "char.embeddings", num_chars, embedding_dim, embedding_init, rng)?;
        let stack = BiLstmStack::new(store, "char.bilstm", embedding_dim, lstm_size, layers, rng)?;
        let mlp = MlpParams::new(store, "char.mlp", gather.len() * lstm_size, mlp_size, scale, rng)?;
        let classifier = ClassifierParams::new(store, "char.classifier", mlp_size, num_tags, rng)?;
        Ok(CharSentEncoderParams {
            embeddings,
            stack,
            mlp,
            classifier,
            gather,
        })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.embeddings];
        ids.extend(self.stack.param_ids());
        ids.extend(self.mlp.param_ids());
        ids.extend(self.classifier.param_ids());
        ids
    }

    /// Runs the BiLSTM stack over the sentence's full character stream and
    /// gathers, per token, the selected outputs at its first and last characters.
    pub fn encode(&self, g: &mut Graph<'_>, sentence: &EncodedSentence, drop: EncoderDropout, phase: &mut Phase) -> Result<EncoderOutput> {
        if sentence.is_empty() {
            return Err(Error::EmptySequence("encode_chars_sentence"));
        }
        let n = sentence.char_ids.len();
        if let Some(&(a, b)) = sentence.spans.iter().find(|&&(a, b)| a > b || b >= n) {
            return Err(Error::InvalidArgument(format!("span ({a}, {b}) outside a stream of {n} characters")));
        }
        let emb = embedding_lookup(g, self.embeddings, &sentence.char_ids)?;
        let emb = dropout(g, emb, drop.embeddings, DropoutMode::SingleMask, phase)?;
        let out = self.stack.run(g, emb, drop.lstm(), phase)?;
        let firsts: Vec<usize> = sentence.spans.iter().map(|s| s.0).collect();
        let lasts: Vec<usize> = sentence.spans.iter().map(|s| s.1).collect();
        let mut parts = Vec::with_capacity(self.gather.len());
        for p in self.gather.points() {
            let (src, idx) = match p {
                GatherPoint::FFirst => (out.forward, &firsts),
                GatherPoint::FLast => (out.forward, &lasts),
                GatherPoint::BFirst => (out.backward, &firsts),
                GatherPoint::BLast => (out.backward, &lasts),
            };
            parts.push(g.gather_rows(src, idx)?);
        }
        let reps = if parts.len() == 1 { parts[0] } else { g.concat(&parts, 1)? };
        let x = dropout(g, reps, drop.mlp, DropoutMode::SingleMask, phase)?;
        let features = self.mlp.apply(g, x)?;
        let logits = self.classifier.logits(g, features)?;
        Ok(EncoderOutput { reps, features, logits })
    }
}

/// Token-internal character encoder: the final state of a left-to-right
/// LSTM over one token's characters plus attention over all its states.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CharTokenEncoderParams {
    pub embeddings: ParamId,
    pub lstm: LstmParams,
    /// `[hidden, 1]` scoring vector.
    pub attention: ParamId,
    pub classifier: ClassifierParams,
}

impl CharTokenEncoderParams {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        num_chars: usize,
        embedding_dim: usize,
        embedding_init: Init,
        lstm_size: usize,
        num_tags: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let embeddings = embedding_table(store, "char.embeddings", num_chars, embedding_dim, embedding_init, rng)?;
        let lstm = LstmParams::new(store, "char.lstm", embedding_dim, lstm_size, rng)?;
        let limit = (6.0 / (lstm_size + 1) as f64).sqrt();
        let attention = store.add("char.attention", Tensor::create(&[lstm_size, 1], Init::Uniform { limit }, rng)?, true);
        let classifier = ClassifierParams::new(store, "char.classifier", lstm_size, num_tags, rng)?;
        Ok(CharTokenEncoderParams {
            embeddings,
            lstm,
            attention,
            classifier,
        })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.embeddings];
        ids.extend(self.lstm.param_ids());
        ids.push(self.attention);
        ids.extend(self.classifier.param_ids());
        ids
    }

    pub fn encode(&self, g: &mut Graph<'_>, sentence: &EncodedSentence, drop: EncoderDropout, phase: &mut Phase) -> Result<EncoderOutput> {
        if sentence.is_empty() {
            return Err(Error::EmptySequence("encode_chars_token"));
        }
        let score = g.param(self.attention)?;
        let mut reps = Vec::with_capacity(sentence.len());
        for i in 0..sentence.len() {
            let chars = sentence.token_chars(i);
            if chars.is_empty() {
                return Err(Error::EmptyForm);
            }
            let emb = embedding_lookup(g, self.embeddings, chars)?;
            let emb = dropout(g, emb, drop.embeddings, DropoutMode::SingleMask, phase)?;
            let states = lstm_run(g, &self.lstm, emb, false, drop.lstm, phase)?;
            reps.push(char_attention(g, states, score)?);
        }
        let reps = g.concat(&reps, 0)?;
        let x = dropout(g, reps, drop.mlp, DropoutMode::SingleMask, phase)?;
        let logits = self.classifier.logits(g, x)?;
        Ok(EncoderOutput {
            reps,
            features: reps,
            logits,
        })
    }
}

/// Either character encoder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CharEncoder {
    Sentence(CharSentEncoderParams),
    Token(CharTokenEncoderParams),
}

impl CharEncoder {
    pub fn param_ids(&self) -> Vec<ParamId> {
        match self {
            CharEncoder::Sentence(p) => p.param_ids(),
            CharEncoder::Token(p) => p.param_ids(),
        }
    }

    pub fn feature_size(&self) -> usize {
        match self {
            CharEncoder::Sentence(p) => p.mlp.output_size,
            CharEncoder::Token(p) => p.lstm.hidden_size,
        }
    }

    pub fn encode(&self, g: &mut Graph<'_>, sentence: &EncodedSentence, drop: EncoderDropout, phase: &mut Phase) -> Result<EncoderOutput> {
        match self {
            CharEncoder::Sentence(p) => p.encode(g, sentence, drop, phase),
            CharEncoder::Token(p) => p.encode(g, sentence, drop, phase),
        }
    }
}

/// Sentence-level word encoder over learned plus frozen pretrained embeddings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordEncoderParams {
    pub embeddings: ParamId,
    /// Frozen; never receives gradient.
    pub pretrained: ParamId,
    pub stack: BiLstmStack,
    pub mlp: MlpParams,
    pub classifier: ClassifierParams,
}

#[allow(clippy::too_many_arguments)]
impl WordEncoderParams {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        pretrained: Tensor,
        embedding_init: Init,
        lstm_size: usize,
        layers: usize,
        mlp_size: usize,
        scale: GaussianScale,
        num_tags: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let (vocab, dim) = (pretrained.rows(), pretrained.cols());
        let embeddings = embedding_table(store, "word.embeddings", vocab, dim, embedding_init, rng)?;
        let pretrained = store.add("word.pretrained", pretrained, false);
        let stack = BiLstmStack::new(store, "word.bilstm", dim, lstm_size, layers, rng)?;
        let mlp = MlpParams::new(store, "word.mlp", 2 * lstm_size, mlp_size, scale, rng)?;
        let classifier = ClassifierParams::new(store, "word.classifier", mlp_size, num_tags, rng)?;
        Ok(WordEncoderParams {
            embeddings,
            pretrained,
            stack,
            mlp,
            classifier,
        })
    }

    /// Trainable parameters (the pretrained matrix is excluded).
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.embeddings];
        ids.extend(self.stack.param_ids());
        ids.extend(self.mlp.param_ids());
        ids.extend(self.classifier.param_ids());
        ids
    }

    pub fn encode(&self, g: &mut Graph<'_>, sentence: &EncodedSentence, drop: EncoderDropout, phase: &mut Phase) -> Result<EncoderOutput> {
        if sentence.is_empty() {
            return Err(Error::EmptySequence("encode_words"));
        }
        let learned = embedding_lookup(g, self.embeddings, &sentence.word_ids)?;
        let pre = embedding_lookup(g, self.pretrained, &sentence.word_ids)?;
        let input = g.add(learned, pre)?;
        let input = dropout(g, input, drop.embeddings, DropoutMode::SingleMask, phase)?;
        let out = self.stack.run(g, input, drop.lstm(), phase)?;
        let reps = g.concat(&[out.forward, out.backward], 1)?;
        let x = dropout(g, reps, drop.mlp, DropoutMode::SingleMask, phase)?;
        let features = self.mlp.apply(g, x)?;
        let logits = self.classifier.logits(g, features)?;
        Ok(EncoderOutput { reps, features, logits })
    }
}
