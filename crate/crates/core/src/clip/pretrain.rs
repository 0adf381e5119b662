//! Contrastive fine-tuning loop over image-caption pairs.

use std::fs;
use std::path::{Path, PathBuf};

use candle_core::{Tensor, D};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Backbone, ClipConfig, ModelScale};
use super::contrastive::{similarity_logits_tensor, symmetric_contrastive_loss_tensor, EmbeddingBatch, Modality};
use super::model::{ClipModel, MAX_LOGIT_SCALE};
use crate::data::{load_and_preprocess_image, ImageCaptionRecord, Normalization};
use crate::error::{Error, Result};
use crate::tokenizer::{BpeTokenizer, TokenSequence, DEFAULT_CONTEXT_WINDOW};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub backbone: Backbone,
    pub scale: ModelScale,
    pub context_window: usize,
    /// Initial effective logit scale (inverse temperature).
    pub logit_scale_init: f64,
    pub seed: u64,
    /// General-domain starting weights. Without one the towers start from a
    /// seeded random initialization.
    pub init_checkpoint: Option<PathBuf>,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 64,
            learning_rate: 1e-5,
            backbone: Backbone::Rn50,
            scale: ModelScale::Full,
            context_window: DEFAULT_CONTEXT_WINDOW,
            logit_scale_init: 1.0 / 0.07,
            seed: 0,
            init_checkpoint: None,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::ConfigInvalid(m.to_string()));
        if self.epochs < 1 {
            return bad("pretrain epochs must be at least 1");
        }
        if self.batch_size < 1 {
            return bad("pretrain batch_size must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("pretrain learning_rate must be positive");
        }
        if self.context_window < 1 {
            return bad("pretrain context_window must be at least 1");
        }
        if !(self.logit_scale_init > 0.0 && self.logit_scale_init <= MAX_LOGIT_SCALE) {
            return bad("pretrain logit_scale_init must lie in (0, 100]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug)]
pub struct PretrainOutcome {
    pub model: ClipModel,
    /// Lowest validation loss (training loss when no validation set is given).
    pub best_checkpoint: PathBuf,
    pub last_checkpoint: PathBuf,
    pub loss_log: PathBuf,
    pub losses: Vec<EpochLoss>,
}

struct Encoded {
    images: Tensor,
    tokens: Vec<TokenSequence>,
}

fn encode_pairs(
    records: &[ImageCaptionRecord],
    tokenizer: &BpeTokenizer,
    resolution: usize,
    window: usize,
) -> Result<Encoded> {
    let images = records
        .par_iter()
        .map(|r| load_and_preprocess_image(&r.image_path, resolution, Normalization::CLIP))
        .collect::<Result<Vec<_>>>()?;
    let tokens = records
        .iter()
        .map(|r| tokenizer.tokenize_caption(&r.caption, window))
        .collect::<Result<Vec<_>>>()?;
    Ok(Encoded {
        images: Tensor::stack(&images, 0)?,
        tokens,
    })
}

fn batch_loss(model: &ClipModel, data: &Encoded, idx: &[usize], train: bool) -> Result<Tensor> {
    let ids = Tensor::new(idx.iter().map(|&i| i as u32).collect::<Vec<_>>(), data.images.device())?;
    let images = data.images.index_select(&ids, 0)?;
    let tokens: Vec<TokenSequence> = idx.iter().map(|&i| data.tokens[i].clone()).collect();
    let img = model.encode_images_t(&images, train)?;
    let txt = model.encode_texts(&tokens)?;
    let logits = similarity_logits_tensor(&img, &txt, &model.logit_scale_tensor()?)?;
    symmetric_contrastive_loss_tensor(&logits)
}

/// Mean loss over consecutive chunks of `batch`, with a trailing partial chunk
/// folded into the one before it.
fn evaluation_loss(model: &ClipModel, data: &Encoded, batch: usize) -> Result<f64> {
    let n = data.tokens.len();
    let mut bounds = Vec::new();
    let mut start = 0;
    while start < n {
        let end = if n - start < 2 * batch { n } else { start + batch };
        bounds.push((start, end));
        start = end;
    }
    let mut total = 0.0;
    for (s, e) in bounds {
        let idx: Vec<usize> = (s..e).collect();
        let loss = batch_loss(model, data, &idx, false)?.to_scalar::<f32>()? as f64;
        total += loss * (e - s) as f64;
    }
    Ok(total / n as f64)
}

fn write_loss_log(path: &Path, losses: &[EpochLoss]) -> Result<()> {
    let fail = |e: String| Error::WriteFailure {
        path: path.to_path_buf(),
        reason: e,
    };
    let mut w = csv::Writer::from_path(path).map_err(|e| fail(e.to_string()))?;
    w.write_record(["epoch", "train_loss", "val_loss"])
        .map_err(|e| fail(e.to_string()))?;
    for l in losses {
        w.write_record([
            l.epoch.to_string(),
            format!("{:.9}", l.train_loss),
            l.val_loss.map(|v| format!("{v:.9}")).unwrap_or_default(),
        ])
        .map_err(|e| fail(e.to_string()))?;
    }
    w.flush().map_err(|e| fail(e.to_string()))
}

fn build_model(config: &PretrainConfig, vocab_size: usize) -> Result<ClipModel> {
    let log_scale = config.logit_scale_init.ln();
    match &config.init_checkpoint {
        Some(path) => {
            let model = ClipModel::load(path)?;
            let c = model.config();
            if c.backbone != config.backbone {
                return Err(Error::ConfigInvalid(format!(
                    "init checkpoint holds {} weights, config asks for {}",
                    c.backbone, config.backbone
                )));
            }
            if c.text.vocab_size != vocab_size || c.text.context_window != config.context_window {
                return Err(Error::ConfigInvalid(
                    "init checkpoint text tower does not match tokenizer or context window".into(),
                ));
            }
            Ok(model)
        }
        None => {
            log::warn!("no init checkpoint given; starting from seeded random weights");
            let cfg = ClipConfig::new(config.backbone, config.scale, vocab_size, config.context_window);
            ClipModel::with_logit_scale(cfg, config.seed, log_scale)
        }
    }
}

/// Fine-tunes both towers and the logit scale with Adam on `train`, writing
/// `best.safetensors`, `last.safetensors` and `loss_log.csv` into `out_dir`.
///
/// Each epoch visits a seeded permutation of the pairs in batches of
/// `batch_size`, dropping the final incomplete batch. A corpus smaller than one
/// batch trains on a single batch of all its pairs.
pub fn run_pretraining(
    config: &PretrainConfig,
    train: &[ImageCaptionRecord],
    val: Option<&[ImageCaptionRecord]>,
    tokenizer: &BpeTokenizer,
    out_dir: &Path,
) -> Result<PretrainOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let val = val.filter(|v| !v.is_empty());
    let write_fail = |path: &Path, e: std::io::Error| Error::CheckpointWriteFailure {
        path: path.to_path_buf(),
        reason: e.to_string(),
    };
    fs::create_dir_all(out_dir).map_err(|e| write_fail(out_dir, e))?;

    let model = build_model(config, tokenizer.vocab_size())?;
    let resolution = model.resolution();
    let train_data = encode_pairs(train, tokenizer, resolution, config.context_window)?;
    let val_data = val
        .map(|v| encode_pairs(v, tokenizer, resolution, config.context_window))
        .transpose()?;

    let batch = config.batch_size.min(train.len());
    if batch < config.batch_size {
        log::warn!(
            "corpus has {} pairs; shrinking batch from {} to {batch}",
            train.len(),
            config.batch_size
        );
    }
    let mut opt = AdamW::new(
        model.store().trainable_vars(),
        ParamsAdamW {
            lr: config.learning_rate,
            weight_decay: 0.0,
            ..Default::default()
        },
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);

    let best = out_dir.join("best.safetensors");
    let last = out_dir.join("last.safetensors");
    let loss_log = out_dir.join("loss_log.csv");
    let mut losses = Vec::with_capacity(config.epochs);
    let mut best_score = f64::INFINITY;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut steps = 0usize;
        for idx in order.chunks_exact(batch) {
            let loss = batch_loss(&model, &train_data, idx, true)?;
            let value = loss.to_scalar::<f32>()? as f64;
            if !value.is_finite() {
                return Err(Error::NonFinite("contrastive loss"));
            }
            opt.backward_step(&loss)?;
            model.clamp_logit_scale()?;
            sum += value;
            steps += 1;
        }
        let train_loss = sum / steps as f64;
        let val_loss = val_data
            .as_ref()
            .map(|v| evaluation_loss(&model, v, config.batch_size))
            .transpose()?;
        let entry = EpochLoss {
            epoch,
            train_loss,
            val_loss,
        };
        log::info!(
            "pretrain epoch {epoch}/{}: train {train_loss:.6}{}",
            config.epochs,
            val_loss.map(|v| format!(", val {v:.6}")).unwrap_or_default()
        );
        losses.push(entry);

        let ck = model.to_checkpoint()?;
        ck.save(&last)?;
        let score = val_loss.unwrap_or(train_loss);
        if score < best_score {
            best_score = score;
            ck.save(&best)?;
        }
        write_loss_log(&loss_log, &losses)?;
    }

    Ok(PretrainOutcome {
        model,
        best_checkpoint: best,
        last_checkpoint: last,
        loss_log,
        losses,
    })
}

/// Row-wise mean cosine between matched image/caption pairs; a quick
/// alignment diagnostic.
pub fn mean_matched_cosine(images: &EmbeddingBatch, texts: &EmbeddingBatch) -> Result<f64> {
    if images.modality != Modality::Image || texts.modality != Modality::Text {
        return Err(Error::shape("expected an image batch and a text batch"));
    }
    let a = images.normalized()?.vectors;
    let b = texts.normalized()?.vectors;
    Ok((a * b)?.sum(D::Minus1)?.mean_all()?.to_scalar::<f32>()? as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_validation() {
        let c = PretrainConfig::default();
        assert_eq!(
            (c.epochs, c.batch_size, c.learning_rate, c.context_window),
            (50, 64, 1e-5, 76)
        );
        assert!(c.validate().is_ok());
        for bad in [
            PretrainConfig { epochs: 0, ..c.clone() },
            PretrainConfig {
                batch_size: 0,
                ..c.clone()
            },
            PretrainConfig {
                learning_rate: 0.0,
                ..c.clone()
            },
            PretrainConfig {
                logit_scale_init: 101.0,
                ..c.clone()
            },
        ] {
            assert!(matches!(bad.validate(), Err(Error::ConfigInvalid(_))));
        }
    }

    #[test]
    fn empty_corpus_rejected_before_training() {
        let tok = BpeTokenizer::from_merges("#version: 0.2\n").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let err = run_pretraining(&PretrainConfig::default(), &[], None, &tok, dir.path()).unwrap_err();
        assert!(matches!(err, Error::EmptyCorpus));
        let zero = PretrainConfig {
            epochs: 0,
            ..Default::default()
        };
        assert!(matches!(
            run_pretraining(&zero, &[], None, &tok, dir.path()),
            Err(Error::ConfigInvalid(_))
        ));
    }
}
