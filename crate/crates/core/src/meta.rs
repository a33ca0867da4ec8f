//! The meta-BiLSTM that combines character and word features.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{argmax_rows, dropout, BiLstmStack, ClassifierParams, DropoutMode, GaussianScale, LstmDropout, MlpParams, Phase};
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetaParams {
    pub stack: BiLstmStack,
    pub mlp: MlpParams,
    pub classifier: ClassifierParams,
}

/// Dropout rates for the meta model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetaDropout {
    pub lstm: f64,
    pub mlp: f64,
}

impl MetaDropout {
    pub const NONE: MetaDropout = MetaDropout { lstm: 0.0, mlp: 0.0 };
}

#[derive(Debug, Clone, Copy)]
pub struct MetaOutput {
    pub combined: Var,
    pub logits: Var,
}

#[allow(clippy::too_many_arguments)]
impl MetaParams {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        char_features: usize,
        word_features: usize,
        lstm_size: usize,
        layers: usize,
        mlp_size: usize,
        scale: GaussianScale,
        num_tags: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let stack = BiLstmStack::new(store, "meta.bilstm", char_features + word_features, lstm_size, layers, rng)?;
        let mlp = MlpParams::new(store, "meta.mlp", 2 * lstm_size, mlp_size, scale, rng)?;
        let classifier = ClassifierParams::new(store, "meta.classifier", mlp_size, num_tags, rng)?;
        Ok(MetaParams { stack, mlp, classifier })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.stack.param_ids();
        ids.extend(self.mlp.param_ids());
        ids.extend(self.classifier.param_ids());
        ids
    }

    pub fn input_size(&self) -> usize {
        self.stack.input_size()
    }

    /// Concatenates the per-token features, runs the meta BiLSTM, MLP and
    /// classifier. With `detach` the inputs are cut from the encoder graphs
    /// so the meta loss cannot reach encoder parameters.
    pub fn combine(
        &self,
        g: &mut Graph<'_>,
        char_features: Var,
        word_features: Var,
        detach: bool,
        drop: MetaDropout,
        phase: &mut Phase,
    ) -> Result<MetaOutput> {
        let (nc, nw) = (g.shape(char_features)[0], g.shape(word_features)[0]);
        if nc != nw {
            return Err(Error::InvalidArgument(format!("meta inputs have {nc} and {nw} tokens")));
        }
        if nc == 0 {
            return Err(Error::EmptySequence("combine"));
        }
        let (c, w) = if detach {
            (g.detach(char_features), g.detach(word_features))
        } else {
            (char_features, word_features)
        };
        let cw = g.concat(&[c, w], 1)?;
        let lstm_drop = LstmDropout {
            input: drop.lstm,
            state: drop.lstm,
            first_layer_input: true,
        };
        let out = self.stack.run(g, cw, lstm_drop, phase)?;
        let o = g.concat(&[out.forward, out.backward], 1)?;
        let x = dropout(g, o, drop.mlp, DropoutMode::SingleMask, phase)?;
        let combined = self.mlp.apply(g, x)?;
        let logits = self.classifier.logits(g, combined)?;
        Ok(MetaOutput { combined, logits })
    }
}

/// Highest-scoring tag per token; ties go to the lowest id.
pub fn predict(logits: &Tensor) -> Vec<usize> {
    argmax_rows(logits)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn predict_examples() {
        let t = Tensor::matrix(3, 3, vec![0.1, 0.9, 0.3, 1.0, 1.0, 1.0, 1.0, 9.0, 3.0]).unwrap();
        assert_eq!(predict(&t), vec![1, 0, 1]);
    }
}
