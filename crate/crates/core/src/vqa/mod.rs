//! Answer classification over composite visual features and an encoded
//! question.

mod ban;
mod cdae;
mod classifier;
mod loss;
mod model;
mod question;

pub use ban::{attention_row_sums, AttentionMap, BanConfig, BanFusion, Glimpse};
pub use cdae::{Cdae, CdaeConfig, CdaeOutput, ReconstructionPair};
pub use classifier::AnswerClassifier;
pub use loss::{classification_loss, one_hot, reconstruction_loss, vqa_loss, LossReport, VqaLoss};
pub use model::{
    answer_for_logits, argmax, VisualFeatures, VqaForward, VqaInputs, VqaModel, VqaModelConfig, CHECKPOINT_KIND,
};
pub use question::{
    oov_vector, question_words, Lstm, QuestionEncoder, QuestionEncoding, QuestionTokens, WordEmbeddings, WordTable,
    OOV_SEED,
};

use serde::{Deserialize, Serialize};

/// Training mode enables batch statistics and autoencoder input noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}
