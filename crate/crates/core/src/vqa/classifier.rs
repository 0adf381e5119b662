use candle_core::{Module, Tensor};

use crate::error::{Error, Result};
use crate::nn::{Linear, Scope};

/// Two-layer ReLU head producing one raw score per answer.
#[derive(Debug, Clone)]
pub struct AnswerClassifier {
    fc1: Linear,
    fc2: Linear,
    input_dim: usize,
    classes: usize,
}

impl AnswerClassifier {
    pub fn new(scope: &Scope, input_dim: usize, classes: usize) -> Result<Self> {
        if classes == 0 {
            return Err(Error::EmptyVocabulary);
        }
        Ok(Self {
            fc1: Linear::new(&scope.pp("fc1"), input_dim, 2 * input_dim)?,
            fc2: Linear::new(&scope.pp("fc2"), 2 * input_dim, classes)?,
            input_dim,
            classes,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// `fused: [N, F]` → logits `[N, V]`.
    pub fn forward(&self, fused: &Tensor) -> Result<Tensor> {
        match fused.dims() {
            [_, f] if *f == self.input_dim => {}
            dims => {
                return Err(Error::shape(format!(
                    "classifier expects [N, {}], got {dims:?}",
                    self.input_dim
                )))
            }
        }
        Ok(self.fc2.forward(&self.fc1.forward(fused)?.relu()?)?)
    }
}
