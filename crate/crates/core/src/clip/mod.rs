//! Dual image/text encoder and its contrastive fine-tuning.

mod config;
mod contrastive;
mod model;
mod pretrain;
mod text;
mod vision;

pub use config::{Backbone, ClipConfig, ModelScale, TextConfig, VisionConfig};
pub use contrastive::{
    contrastive_loss_gradient, similarity_logits, similarity_logits_tensor, symmetric_contrastive_loss,
    symmetric_contrastive_loss_tensor, ContrastiveLossReport, EmbeddingBatch, Modality, SimilarityMatrix,
};
pub(crate) use model::check_image_batch;
pub use model::{default_log_logit_scale, ClipModel, CHECKPOINT_KIND, MAX_LOGIT_SCALE};
pub use pretrain::{mean_matched_cosine, run_pretraining, EpochLoss, PretrainConfig, PretrainOutcome};
pub use text::TextTransformer;
pub use vision::{l2_normalize, VisionTower, VisualOutput};
