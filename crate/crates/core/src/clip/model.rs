use std::path::Path;

use candle_core::{Device, Tensor};

use super::config::{ClipConfig, VisionConfig};
use super::contrastive::{EmbeddingBatch, Modality};
use super::text::{ids_tensor, TextTransformer};
use super::vision::{VisionTower, VisualOutput};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::nn::{Init, ParamStore};
use crate::tokenizer::TokenSequence;

pub const CHECKPOINT_KIND: &str = "clip";
/// Upper bound on the effective logit scale.
pub const MAX_LOGIT_SCALE: f64 = 100.0;
pub const LOGIT_SCALE_NAME: &str = "logit_scale";

pub fn default_log_logit_scale() -> f64 {
    (1.0f64 / 0.07).ln()
}

/// Dual encoder: an image tower and a text tower projecting into one space,
/// plus a learnable log-temperature.
#[derive(Debug)]
pub struct ClipModel {
    config: ClipConfig,
    store: ParamStore,
    vision: VisionTower,
    text: TextTransformer,
    log_logit_scale: Tensor,
}

impl ClipModel {
    pub fn new(config: ClipConfig, seed: u64) -> Result<Self> {
        Self::with_logit_scale(config, seed, default_log_logit_scale())
    }

    pub fn with_logit_scale(config: ClipConfig, seed: u64, log_logit_scale: f64) -> Result<Self> {
        config.validate()?;
        if !log_logit_scale.is_finite() {
            return Err(Error::ConfigInvalid("logit scale init must be finite".into()));
        }
        let store = ParamStore::new(seed, &Device::Cpu);
        let root = store.root();
        let vision = VisionTower::new(&root.pp("visual"), &config.vision, config.embed_dim)?;
        let text = TextTransformer::new(&root.pp("text"), &config.text, config.embed_dim)?;
        let log_logit_scale = root.param(
            LOGIT_SCALE_NAME,
            (),
            Init::Const(log_logit_scale.min(MAX_LOGIT_SCALE.ln())),
        )?;
        Ok(Self {
            config,
            store,
            vision,
            text,
            log_logit_scale,
        })
    }

    pub fn config(&self) -> &ClipConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn embed_dim(&self) -> usize {
        self.config.embed_dim
    }

    pub fn resolution(&self) -> usize {
        self.config.vision.resolution()
    }

    pub fn check_images(&self, images: &Tensor) -> Result<()> {
        check_image_batch(&self.config.vision, images)
    }

    /// Pooled and per-position visual embeddings.
    pub fn visual_features(&self, images: &Tensor, train: bool) -> Result<VisualOutput> {
        self.check_images(images)?;
        Ok(self.vision.forward_t(images, train)?)
    }

    /// Evaluation-mode image embeddings, `[N, embed_dim]`.
    pub fn encode_images(&self, images: &Tensor) -> Result<EmbeddingBatch> {
        self.encode_images_t(images, false)
    }

    pub fn encode_images_t(&self, images: &Tensor, train: bool) -> Result<EmbeddingBatch> {
        EmbeddingBatch::new(self.visual_features(images, train)?.pooled, Modality::Image)
    }

    /// Caption embeddings, `[N, embed_dim]`. Every sequence must span the
    /// model's context window.
    pub fn encode_texts(&self, tokens: &[TokenSequence]) -> Result<EmbeddingBatch> {
        if tokens.is_empty() {
            return Err(Error::shape("empty caption batch"));
        }
        let ctx = self.text.context_window();
        let vocab = self.text.vocab_size();
        for t in tokens {
            if t.ids.len() != ctx {
                return Err(Error::shape(format!(
                    "token sequence of length {} for a context window of {ctx}",
                    t.ids.len()
                )));
            }
            if let Some(&id) = t.ids.iter().find(|&&id| id as usize >= vocab) {
                return Err(Error::TokenOutOfRange { id, vocab_size: vocab });
            }
        }
        let rows: Vec<&[u32]> = tokens.iter().map(|t| t.ids.as_slice()).collect();
        let lengths: Vec<usize> = tokens.iter().map(|t| t.length).collect();
        let out = self.text.forward(&ids_tensor(&rows)?, &lengths)?;
        EmbeddingBatch::new(out, Modality::Text)
    }

    /// Effective scale `exp(min(log_scale, ln 100))`, differentiable.
    pub fn logit_scale_tensor(&self) -> Result<Tensor> {
        Ok(self.log_logit_scale.minimum(MAX_LOGIT_SCALE.ln())?.exp()?)
    }

    pub fn logit_scale(&self) -> Result<f64> {
        Ok(self.logit_scale_tensor()?.to_scalar::<f32>()? as f64)
    }

    /// Pulls the stored log-scale back under the ceiling after an update.
    pub fn clamp_logit_scale(&self) -> Result<()> {
        let var = self
            .store
            .get(LOGIT_SCALE_NAME)
            .ok_or_else(|| Error::ConfigInvalid("model has no logit scale".into()))?;
        let ceiling = MAX_LOGIT_SCALE.ln() as f32;
        if var.as_tensor().to_scalar::<f32>()? > ceiling {
            var.set(&Tensor::new(ceiling, var.device())?)?;
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        Ok(Checkpoint::new(
            CHECKPOINT_KIND,
            serde_json::to_value(&self.config)?,
            self.store.snapshot()?,
        ))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    /// Rebuilds a model from a checkpoint's config echo and weights.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind(CHECKPOINT_KIND)?;
        let config: ClipConfig =
            serde_json::from_value(ck.config.clone()).map_err(|e| Error::CorruptCheckpoint(format!("config: {e}")))?;
        let model = Self::new(config, 0)?;
        model.store.load_all(&ck.tensors)?;
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    /// Overwrites this model's weights; the checkpoint must describe the same
    /// architecture.
    pub fn load_weights(&self, ck: &Checkpoint) -> Result<()> {
        ck.expect_kind(CHECKPOINT_KIND)?;
        self.store.load_all(&ck.tensors)
    }
}

pub(crate) fn check_image_batch(cfg: &VisionConfig, images: &Tensor) -> Result<()> {
    let dims = images.dims();
    if dims.len() != 4 || dims[1] != 3 {
        return Err(Error::shape(format!("images must be [N, 3, R, R], got {dims:?}")));
    }
    let expected = cfg.resolution();
    for &got in &dims[2..] {
        if got != expected {
            return Err(Error::ResolutionMismatch { expected, got });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clip::{Backbone, ModelScale};

    fn tiny(b: Backbone) -> ClipModel {
        ClipModel::new(ClipConfig::new(b, ModelScale::Tiny, 50, 8), 3).unwrap()
    }

    fn images(model: &ClipModel, n: usize) -> Tensor {
        let r = model.resolution();
        Tensor::randn(0f32, 1.0, (n, 3, r, r), &Device::Cpu).unwrap()
    }

    #[test]
    fn image_and_text_dims_agree() {
        for b in Backbone::ALL {
            let m = tiny(b);
            let img = m.encode_images(&images(&m, 2)).unwrap();
            let seq = TokenSequence {
                ids: vec![3, 4, 5, 0, 0, 0, 0, 0],
                length: 3,
            };
            let txt = m.encode_texts(&[seq.clone(), seq]).unwrap();
            assert_eq!(img.vectors.dims(), &[2, m.embed_dim()]);
            assert_eq!(txt.vectors.dims(), img.vectors.dims());
        }
    }

    #[test]
    fn wrong_resolution_and_tokens_rejected() {
        let m = tiny(Backbone::Rn50);
        let bad = Tensor::zeros((1, 3, 32, 32), candle_core::DType::F32, &Device::Cpu).unwrap();
        assert!(matches!(
            m.encode_images(&bad),
            Err(Error::ResolutionMismatch { expected: 64, got: 32 })
        ));
        let seq = TokenSequence {
            ids: vec![50, 0, 0, 0, 0, 0, 0, 0],
            length: 1,
        };
        assert!(matches!(
            m.encode_texts(&[seq]),
            Err(Error::TokenOutOfRange { id: 50, vocab_size: 50 })
        ));
    }

    #[test]
    fn logit_scale_starts_at_inverse_temperature() {
        let m = tiny(Backbone::VitB32);
        assert!((m.logit_scale().unwrap() - 1.0 / 0.07).abs() < 1e-3);
        let capped =
            ClipModel::with_logit_scale(ClipConfig::new(Backbone::VitB32, ModelScale::Tiny, 50, 8), 0, 9.0).unwrap();
        assert!((capped.logit_scale().unwrap() - 100.0).abs() < 1e-3);
    }

    #[test]
    fn checkpoint_round_trip_and_shape_guard() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vit.safetensors");
        let vit = tiny(Backbone::VitB32);
        vit.save(&path).unwrap();
        let back = ClipModel::load(&path).unwrap();
        let a = vit.store().snapshot().unwrap();
        let b = back.store().snapshot().unwrap();
        for (k, t) in &a {
            let x = t.flatten_all().unwrap().to_vec1::<f32>().unwrap();
            let y = b[k].flatten_all().unwrap().to_vec1::<f32>().unwrap();
            assert_eq!(x, y, "{k}");
        }
        let rn = tiny(Backbone::Rn50);
        let ck = Checkpoint::load(&path).unwrap();
        assert!(matches!(rn.load_weights(&ck), Err(Error::CorruptCheckpoint(_))));
    }
}
