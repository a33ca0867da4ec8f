//! The full tagger: character, word and meta models over one parameter store.

use rand::SeedableRng;

use crate::data::{EncodedSentence, Vocabs};
use crate::encoders::{CharEncoder, CharSentEncoderParams, CharTokenEncoderParams, EncoderDropout, EncoderOutput, WordEncoderParams};
use crate::error::{Error, Result};
use crate::meta::{predict, MetaDropout, MetaOutput, MetaParams};
use crate::nn::{ModelRng, Phase};
use crate::tensor::{Graph, Init, ParamId, ParamStore, Tensor, Var};
use crate::training::config::{CharModel, EmbeddingInit, TrainConfig};

/// Which of the three models a pass or prediction refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Part {
    Char,
    Word,
    Meta,
}

impl Part {
    pub const ALL: [Part; 3] = [Part::Char, Part::Word, Part::Meta];

    pub fn name(self) -> &'static str {
        match self {
            Part::Char => "char",
            Part::Word => "word",
            Part::Meta => "meta",
        }
    }
}

#[derive(Debug, Clone)]
pub struct TaggerModel {
    /// The effective configuration; `model.word_embedding_dim` always equals
    /// the pretrained matrix width.
    pub config: TrainConfig,
    pub vocabs: Vocabs,
    pub store: ParamStore,
    pub char: CharEncoder,
    pub word: WordEncoderParams,
    pub meta: MetaParams,
}

/// Outputs of all three models for one sentence.
#[derive(Debug, Clone, Copy)]
pub struct SentenceOutput {
    pub char: EncoderOutput,
    pub word: EncoderOutput,
    pub meta: MetaOutput,
}

fn embedding_init(kind: EmbeddingInit, cfg: &TrainConfig, dim: usize) -> Init {
    match kind {
        EmbeddingInit::Zero => Init::Zeros,
        EmbeddingInit::Gaussian => Init::Gaussian {
            mean: 0.0,
            variance: cfg.init.gaussian_scale.variance(dim),
        },
    }
}

impl TaggerModel {
    /// Builds a freshly initialised model. Without `pretrained` the frozen
    /// matrix is all zeros with `model.word_embedding_dim` columns.
    pub fn new(mut config: TrainConfig, vocabs: Vocabs, pretrained: Option<Tensor>) -> Result<Self> {
        config.validate()?;
        let pretrained = match pretrained {
            Some(p) => {
                if p.rows() != vocabs.words.len() {
                    return Err(Error::InvalidArgument(format!(
                        "pretrained matrix has {} rows for {} words",
                        p.rows(),
                        vocabs.words.len()
                    )));
                }
                config.model.word_embedding_dim = p.cols();
                p
            }
            None => Tensor::zeros(&[vocabs.words.len(), config.model.word_embedding_dim]),
        };
        let num_tags = vocabs.tags.len();
        if num_tags == 0 {
            return Err(Error::InvalidArgument("empty tag set".into()));
        }
        let m = config.model.clone();
        let scale = config.init.gaussian_scale;
        let mut rng = ModelRng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let char_init = embedding_init(config.init.char_embeddings, &config, m.char_embedding_dim);
        let char = match m.char_model {
            CharModel::Sentence => CharEncoder::Sentence(CharSentEncoderParams::new(
                &mut store,
                vocabs.chars.len(),
                m.char_embedding_dim,
                char_init,
                m.char_lstm_size,
                m.char_lstm_layers,
                m.mlp_size,
                scale,
                m.gather.clone(),
                num_tags,
                &mut rng,
            )?),
            CharModel::Token => CharEncoder::Token(CharTokenEncoderParams::new(
                &mut store,
                vocabs.chars.len(),
                m.char_embedding_dim,
                char_init,
                m.char_lstm_size,
                num_tags,
                &mut rng,
            )?),
        };
        let word_init = embedding_init(config.init.word_embeddings, &config, m.word_embedding_dim);
        let word = WordEncoderParams::new(
            &mut store,
            pretrained,
            word_init,
            m.word_lstm_size,
            m.word_lstm_layers,
            m.mlp_size,
            scale,
            num_tags,
            &mut rng,
        )?;
        let meta = MetaParams::new(
            &mut store,
            char.feature_size(),
            m.mlp_size,
            m.meta_lstm_size,
            m.meta_lstm_layers,
            m.mlp_size,
            scale,
            num_tags,
            &mut rng,
        )?;
        if config.init.mlp == EmbeddingInit::Zero {
            let mut mlps = vec![word.mlp.w, meta.mlp.w];
            if let CharEncoder::Sentence(p) = &char {
                mlps.push(p.mlp.w);
            }
            for id in mlps {
                store.value_mut(id).data_mut().fill(0.0);
            }
        }
        Ok(TaggerModel {
            config,
            vocabs,
            store,
            char,
            word,
            meta,
        })
    }

    /// Trainable parameters of one model.
    pub fn param_ids(&self, part: Part) -> Vec<ParamId> {
        match part {
            Part::Char => self.char.param_ids(),
            Part::Word => self.word.param_ids(),
            Part::Meta => self.meta.param_ids(),
        }
    }

    pub fn char_dropout(&self) -> EncoderDropout {
        let d = &self.config.dropout;
        EncoderDropout {
            embeddings: d.char_embeddings,
            lstm: d.lstm,
            mlp: d.mlp,
        }
    }

    pub fn word_dropout(&self) -> EncoderDropout {
        let d = &self.config.dropout;
        EncoderDropout {
            embeddings: d.word_embeddings,
            lstm: d.lstm,
            mlp: d.mlp,
        }
    }

    pub fn meta_dropout(&self) -> MetaDropout {
        MetaDropout {
            lstm: self.config.dropout.lstm,
            mlp: self.config.dropout.mlp,
        }
    }

    pub fn encode_char(&self, g: &mut Graph<'_>, s: &EncodedSentence, phase: &mut Phase) -> Result<EncoderOutput> {
        self.char.encode(g, s, self.char_dropout(), phase)
    }

    pub fn encode_word(&self, g: &mut Graph<'_>, s: &EncodedSentence, phase: &mut Phase) -> Result<EncoderOutput> {
        self.word.encode(g, s, self.word_dropout(), phase)
    }

    /// Runs all three models. The encoders use `phase` only when
    /// `train_encoders` is set and otherwise run without dropout; `detach`
    /// cuts the meta loss off the encoders.
    pub fn forward(&self, g: &mut Graph<'_>, s: &EncodedSentence, phase: &mut Phase, train_encoders: bool, detach: bool) -> Result<SentenceOutput> {
        let (char, word) = if train_encoders {
            (self.encode_char(g, s, phase)?, self.encode_word(g, s, phase)?)
        } else {
            let mut infer = Phase::infer();
            (self.encode_char(g, s, &mut infer)?, self.encode_word(g, s, &mut infer)?)
        };
        let meta = self.meta.combine(g, char.features, word.features, detach, self.meta_dropout(), phase)?;
        Ok(SentenceOutput { char, word, meta })
    }

    /// Predicted tag ids of all three models, without dropout.
    pub fn predict_all(&self, s: &EncodedSentence) -> Result<[Vec<usize>; 3]> {
        let mut g = Graph::with_params(&self.store);
        let out = self.forward(&mut g, s, &mut Phase::infer(), false, true)?;
        Ok([
            predict(g.value(out.char.logits)),
            predict(g.value(out.word.logits)),
            predict(g.value(out.meta.logits)),
        ])
    }

    /// Predicted tag ids of one model, without dropout.
    pub fn predict_part(&self, s: &EncodedSentence, part: Part) -> Result<Vec<usize>> {
        let mut g = Graph::with_params(&self.store);
        let mut phase = Phase::infer();
        let logits = match part {
            Part::Char => self.encode_char(&mut g, s, &mut phase)?.logits,
            Part::Word => self.encode_word(&mut g, s, &mut phase)?.logits,
            Part::Meta => self.forward(&mut g, s, &mut phase, false, true)?.meta.logits,
        };
        Ok(predict(g.value(logits)))
    }

    /// Tag names for a sentence from the given model.
    pub fn tag_names(&self, s: &EncodedSentence, part: Part) -> Result<Vec<String>> {
        Ok(self
            .predict_part(s, part)?
            .into_iter()
            .map(|id| self.vocabs.tag_name(id).to_string())
            .collect())
    }
}

/// Mean token cross-entropy of `logits` against the known gold tags of `s`,
/// or `None` when the sentence has no known gold tag.
pub fn sentence_loss(g: &mut Graph<'_>, logits: Var, s: &EncodedSentence) -> Result<Option<Var>> {
    let (rows, golds): (Vec<usize>, Vec<usize>) = s.tags.iter().enumerate().filter_map(|(i, t)| t.map(|t| (i, t))).unzip();
    if rows.is_empty() {
        return Ok(None);
    }
    let picked = if rows.len() == s.len() { logits } else { g.gather_rows(logits, &rows)? };
    let total = g.cross_entropy(picked, &golds)?;
    Ok(Some(g.scale(total, 1.0 / golds.len() as f64)))
}
