//! Training configuration. Defaults are the published hyperparameters:
//! 3/3/1 BiLSTM layers of size 400, dropout 0.33 on LSTMs, MLPs and word
//! embeddings and 0.05 on character embeddings, ELU MLPs, zero-initialised
//! word embeddings, Gaussian(0, 1) character embeddings and MLP weights,
//! and Adam with lr 0.002, decay 0.999994, eps 1e-8, betas 0.9/0.999.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::Task;
use crate::encoders::GatherStrategy;
use crate::error::{Error, Result};
use crate::nn::GaussianScale;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimization {
    /// Three losses, three optimizers, no gradient across model boundaries.
    Separate,
    /// One summed loss, one optimizer, full backpropagation.
    Joint,
}

impl FromStr for Optimization {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "separate" => Ok(Optimization::Separate),
            "joint" => Ok(Optimization::Joint),
            _ => Err(Error::Config(format!("unknown optimization mode {s:?}"))),
        }
    }
}

impl fmt::Display for Optimization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Optimization::Separate => "separate",
            Optimization::Joint => "joint",
        })
    }
}

/// Which character encoder feeds the meta model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CharModel {
    /// BiLSTM over the whole sentence's characters.
    Sentence,
    /// Unidirectional LSTM with attention over one token's characters.
    Token,
}

impl FromStr for CharModel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sentence" => Ok(CharModel::Sentence),
            "token" => Ok(CharModel::Token),
            _ => Err(Error::Config(format!("unknown char model {s:?}"))),
        }
    }
}

impl fmt::Display for CharModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CharModel::Sentence => "sentence",
            CharModel::Token => "token",
        })
    }
}

/// Which models are trained and which one selects the best epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Components {
    /// Character, word and meta models; selection on meta accuracy.
    All,
    /// Character model alone; selection on its own accuracy.
    CharOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Elu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingInit {
    Zero,
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub char_lstm_layers: usize,
    pub word_lstm_layers: usize,
    pub meta_lstm_layers: usize,
    pub char_lstm_size: usize,
    pub word_lstm_size: usize,
    pub meta_lstm_size: usize,
    pub mlp_size: usize,
    pub mlp_activation: Activation,
    pub char_embedding_dim: usize,
    /// Replaced by the pretrained file's dimension when one is given.
    pub word_embedding_dim: usize,
    pub char_model: CharModel,
    pub gather: GatherStrategy,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            char_lstm_layers: 3,
            word_lstm_layers: 3,
            meta_lstm_layers: 1,
            char_lstm_size: 400,
            word_lstm_size: 400,
            meta_lstm_size: 400,
            mlp_size: 400,
            mlp_activation: Activation::Elu,
            char_embedding_dim: 100,
            word_embedding_dim: 100,
            char_model: CharModel::Sentence,
            gather: GatherStrategy::all(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DropoutConfig {
    /// LSTM inputs and recurrent states.
    pub lstm: f64,
    pub mlp: f64,
    pub word_embeddings: f64,
    pub char_embeddings: f64,
}

impl Default for DropoutConfig {
    fn default() -> Self {
        DropoutConfig {
            lstm: 0.33,
            mlp: 0.33,
            word_embeddings: 0.33,
            char_embeddings: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitConfig {
    pub word_embeddings: EmbeddingInit,
    pub char_embeddings: EmbeddingInit,
    pub mlp: EmbeddingInit,
    /// Variance of every Gaussian initialisation: 1, or `1 / fan_in`.
    pub gaussian_scale: GaussianScale,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig {
            word_embeddings: EmbeddingInit::Zero,
            char_embeddings: EmbeddingInit::Gaussian,
            mlp: EmbeddingInit::Gaussian,
            gaussian_scale: GaussianScale::Unit,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    /// Multiplied into the learning rate once per optimizer step.
    pub decay: f64,
    pub epsilon: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 0.002,
            decay: 0.999994,
            epsilon: 1e-8,
            beta1: 0.9,
            beta2: 0.999,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub max_epochs: usize,
    /// Sentences per optimizer step.
    pub batch_size: usize,
    /// Stop after this many epochs without dev improvement; 0 disables.
    pub patience: usize,
    /// Stop once training accuracy reaches this value (checked on the
    /// selection model after each epoch); 0 disables.
    pub target_train_accuracy: f64,
    pub task: Task,
    pub optimization: Optimization,
    pub components: Components,
    pub dev_fraction: f64,
    pub min_count: usize,
    pub lowercase_words: bool,
    pub pretrained_lowercase_fallback: bool,
    pub model: ModelConfig,
    pub dropout: DropoutConfig,
    pub init: InitConfig,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 1,
            max_epochs: 200,
            batch_size: 32,
            patience: 0,
            target_train_accuracy: 0.0,
            task: Task::Xpos,
            optimization: Optimization::Separate,
            components: Components::All,
            dev_fraction: 0.05,
            min_count: 1,
            lowercase_words: false,
            pretrained_lowercase_fallback: true,
            model: ModelConfig::default(),
            dropout: DropoutConfig::default(),
            init: InitConfig::default(),
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        let positive = [
            ("model.char_lstm_layers", m.char_lstm_layers),
            ("model.word_lstm_layers", m.word_lstm_layers),
            ("model.meta_lstm_layers", m.meta_lstm_layers),
            ("model.char_lstm_size", m.char_lstm_size),
            ("model.word_lstm_size", m.word_lstm_size),
            ("model.meta_lstm_size", m.meta_lstm_size),
            ("model.mlp_size", m.mlp_size),
            ("model.char_embedding_dim", m.char_embedding_dim),
            ("model.word_embedding_dim", m.word_embedding_dim),
            ("batch_size", self.batch_size),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        let d = &self.dropout;
        for (name, r) in [
            ("dropout.lstm", d.lstm),
            ("dropout.mlp", d.mlp),
            ("dropout.word_embeddings", d.word_embeddings),
            ("dropout.char_embeddings", d.char_embeddings),
        ] {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::Config(format!("{name} = {r} outside [0, 1)")));
            }
        }
        let a = &self.adam;
        if !(a.learning_rate >= 0.0 && a.decay > 0.0 && a.decay <= 1.0 && a.epsilon > 0.0) {
            return Err(Error::Config("adam: need learning_rate >= 0, 0 < decay <= 1, epsilon > 0".into()));
        }
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2)) {
            return Err(Error::Config("adam: betas must lie in [0, 1)".into()));
        }
        if !(self.dev_fraction > 0.0 && self.dev_fraction < 1.0) {
            return Err(Error::Config(format!("dev_fraction {} outside (0, 1)", self.dev_fraction)));
        }
        if self.optimization == Optimization::Joint && self.components == Components::CharOnly {
            return Err(Error::Config("joint optimization needs all components".into()));
        }
        Ok(())
    }

    /// Shrinks every network size to `size` (embeddings included), keeping
    /// layer counts, dropout and optimizer settings.
    pub fn scaled(mut self, size: usize) -> Self {
        let m = &mut self.model;
        m.char_lstm_size = size;
        m.word_lstm_size = size;
        m.meta_lstm_size = size;
        m.mlp_size = size;
        m.char_embedding_dim = size;
        m.word_embedding_dim = size;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_published_table() {
        let c = TrainConfig::default();
        assert_eq!((c.model.char_lstm_layers, c.model.word_lstm_layers, c.model.meta_lstm_layers), (3, 3, 1));
        assert_eq!((c.model.char_lstm_size, c.model.word_lstm_size, c.model.meta_lstm_size), (400, 400, 400));
        assert_eq!(
            c.dropout,
            DropoutConfig {
                lstm: 0.33,
                mlp: 0.33,
                word_embeddings: 0.33,
                char_embeddings: 0.05
            }
        );
        assert_eq!(c.adam.learning_rate, 0.002);
        assert_eq!(c.adam.decay, 0.999994);
        assert_eq!(c.adam.epsilon, 1e-8);
        assert_eq!((c.adam.beta1, c.adam.beta2), (0.9, 0.999));
        assert_eq!(c.model.mlp_activation, Activation::Elu);
        assert_eq!(c.init.word_embeddings, EmbeddingInit::Zero);
        assert_eq!(c.init.char_embeddings, EmbeddingInit::Gaussian);
        assert_eq!(c.init.gaussian_scale, GaussianScale::Unit);
        c.validate().unwrap();
    }

    #[test]
    fn validation_catches_bad_values() {
        let mut c = TrainConfig::default();
        c.dropout.mlp = 1.0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.model.meta_lstm_layers = 0;
        assert!(c.validate().is_err());
    }
}
