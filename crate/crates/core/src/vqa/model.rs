use std::path::Path;

use candle_core::{Device, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ban::{AttentionMap, BanConfig, BanFusion};
use super::cdae::{Cdae, CdaeConfig, ReconstructionPair};
use super::classifier::AnswerClassifier;
use super::question::{QuestionEncoder, QuestionTokens, WordTable};
use super::Mode;
use crate::checkpoint::Checkpoint;
use crate::clip::{check_image_batch, ClipConfig, VisionTower, CHECKPOINT_KIND as CLIP_KIND};
use crate::data::AnswerVocabulary;
use crate::error::{Error, Result};
use crate::nn::ParamStore;

pub const CHECKPOINT_KIND: &str = "vqa";
const WORD_TABLE_NAME: &str = "question.word_embedding";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VqaModelConfig {
    /// Architecture of the visual tower; must match the backbone checkpoint.
    pub clip: ClipConfig,
    pub cdae: CdaeConfig,
    pub ban: BanConfig,
    /// Question encoder hidden size, also the fused dimension.
    pub hidden: usize,
    pub max_tokens: usize,
    pub word_dim: usize,
    pub answers: usize,
}

impl VqaModelConfig {
    pub fn visual_dim(&self) -> usize {
        self.clip.embed_dim + self.cdae.code_dim
    }

    pub fn validate(&self) -> Result<()> {
        self.clip.validate()?;
        self.cdae.validate()?;
        if self.hidden == 0 || self.max_tokens == 0 || self.word_dim == 0 {
            return Err(Error::ConfigInvalid(
                "hidden, max_tokens and word_dim must be positive".into(),
            ));
        }
        if self.answers == 0 {
            return Err(Error::EmptyVocabulary);
        }
        Ok(())
    }
}

/// Model inputs for a batch of `N` image-question pairs.
#[derive(Debug, Clone)]
pub struct VqaInputs {
    /// `[N, 3, R, R]`, normalized for the visual tower.
    pub image_full: Tensor,
    /// `[N, 1, S, S]` grayscale in `[0, 1]` for the autoencoder.
    pub image_low: Tensor,
    pub questions: Vec<QuestionTokens>,
}

/// Per-image features. `combined` is `clip_part` followed by `cdae_part`;
/// `positions` holds the pooled vector and every spatial feature of the
/// visual tower, each followed by `cdae_part`.
#[derive(Debug, Clone)]
pub struct VisualFeatures {
    pub clip_part: Tensor,
    pub cdae_part: Tensor,
    pub combined: Tensor,
    pub positions: Tensor,
    pub reconstruction: ReconstructionPair,
}

#[derive(Debug, Clone)]
pub struct VqaForward {
    pub logits: Tensor,
    pub attention: AttentionMap,
    pub reconstruction: ReconstructionPair,
}

#[derive(Debug)]
pub struct VqaModel {
    config: VqaModelConfig,
    store: ParamStore,
    vision: VisionTower,
    cdae: Cdae,
    question: QuestionEncoder,
    ban: BanFusion,
    classifier: AnswerClassifier,
    vocabulary: AnswerVocabulary,
}

impl VqaModel {
    pub fn new(config: VqaModelConfig, table: WordTable, vocabulary: AnswerVocabulary, seed: u64) -> Result<Self> {
        config.validate()?;
        if vocabulary.len() != config.answers {
            return Err(Error::ConfigInvalid(format!(
                "config declares {} answers, vocabulary has {}",
                config.answers,
                vocabulary.len()
            )));
        }
        if table.dim() != config.word_dim {
            return Err(Error::ConfigInvalid(format!(
                "word vectors are {}-d, config expects {}",
                table.dim(),
                config.word_dim
            )));
        }
        let store = ParamStore::new(seed, &Device::Cpu);
        let root = store.root();
        let vision = VisionTower::new(&root.pp("visual"), &config.clip.vision, config.clip.embed_dim)?;
        let cdae = Cdae::new(&root.pp("cdae"), &config.cdae)?;
        let question = QuestionEncoder::new(&root.pp("question"), table, config.hidden, config.max_tokens)?;
        let ban = BanFusion::new(&root.pp("ban"), config.visual_dim(), config.hidden, &config.ban)?;
        let classifier = AnswerClassifier::new(&root.pp("classifier"), config.hidden, config.answers)?;
        Ok(Self {
            config,
            store,
            vision,
            cdae,
            question,
            ban,
            classifier,
            vocabulary,
        })
    }

    pub fn config(&self) -> &VqaModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn vocabulary(&self) -> &AnswerVocabulary {
        &self.vocabulary
    }

    pub fn question_encoder(&self) -> &QuestionEncoder {
        &self.question
    }

    pub fn fusion(&self) -> &BanFusion {
        &self.ban
    }

    pub fn classifier(&self) -> &AnswerClassifier {
        &self.classifier
    }

    pub fn cdae(&self) -> &Cdae {
        &self.cdae
    }

    /// Copies the visual tower out of a contrastive checkpoint.
    pub fn load_backbone(&self, ck: &Checkpoint) -> Result<()> {
        ck.expect_kind(CLIP_KIND)?;
        let theirs: ClipConfig =
            serde_json::from_value(ck.config.clone()).map_err(|e| Error::CorruptCheckpoint(format!("config: {e}")))?;
        if theirs.vision != self.config.clip.vision || theirs.embed_dim != self.config.clip.embed_dim {
            return Err(Error::CorruptCheckpoint(format!(
                "backbone checkpoint holds a {} tower that does not match the configured one",
                theirs.backbone
            )));
        }
        self.store.load_prefix("visual.", &ck.group("visual"))
    }

    pub fn load_backbone_file(&self, path: &Path) -> Result<()> {
        self.load_backbone(&Checkpoint::load(path)?)
    }

    pub fn composite_visual_features<R: Rng + ?Sized>(
        &self,
        image_full: &Tensor,
        image_low: &Tensor,
        mode: Mode,
        rng: &mut R,
    ) -> Result<VisualFeatures> {
        check_image_batch(&self.config.clip.vision, image_full)?;
        let n = image_full.dim(0)?;
        if image_low.dims().first() != Some(&n) {
            return Err(Error::shape(format!(
                "{n} full-resolution images but low-resolution batch {:?}",
                image_low.dims()
            )));
        }
        let vis = self.vision.forward_t(image_full, mode == Mode::Train)?;
        let ae = self.cdae.forward(image_low, mode, self.config.cdae.noise_sigma, rng)?;
        let clip_part = vis.pooled;
        let cdae_part = ae.encoding;
        let combined = Tensor::cat(&[&clip_part, &cdae_part], 1)?;
        let tower = Tensor::cat(&[&clip_part.unsqueeze(1)?, &vis.positions], 1)?;
        let k = tower.dim(1)?;
        let code = cdae_part.unsqueeze(1)?.broadcast_as((n, k, cdae_part.dim(1)?))?;
        let positions = Tensor::cat(&[&tower, &code], 2)?;
        Ok(VisualFeatures {
            clip_part,
            cdae_part,
            combined,
            positions,
            reconstruction: ae.images,
        })
    }

    pub fn forward<R: Rng + ?Sized>(&self, inputs: &VqaInputs, mode: Mode, rng: &mut R) -> Result<VqaForward> {
        if inputs.questions.len() != inputs.image_full.dim(0)? {
            return Err(Error::shape(format!(
                "{} questions for {} images",
                inputs.questions.len(),
                inputs.image_full.dim(0)?
            )));
        }
        let visual = self.composite_visual_features(&inputs.image_full, &inputs.image_low, mode, rng)?;
        let q = self.question.encode_tokens(&inputs.questions)?;
        let (fused, attention) = self.ban.forward(&visual.positions, &q.hidden)?;
        Ok(VqaForward {
            logits: self.classifier.forward(&fused)?,
            attention,
            reconstruction: visual.reconstruction,
        })
    }

    /// Evaluation-mode answers, one per input row.
    pub fn predict(&self, inputs: &VqaInputs) -> Result<Vec<String>> {
        // Evaluation mode draws no noise, so the generator is never advanced.
        let mut unused = ChaCha8Rng::seed_from_u64(0);
        let out = self.forward(inputs, Mode::Eval, &mut unused)?;
        out.logits
            .to_dtype(candle_core::DType::F32)?
            .to_vec2::<f32>()?
            .iter()
            .map(|row| answer_for_logits(row, &self.vocabulary).map(str::to_string))
            .collect()
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        Ok(Checkpoint::new(
            CHECKPOINT_KIND,
            serde_json::to_value(&self.config)?,
            self.store.snapshot()?,
        )
        .with_extra("answers", serde_json::to_value(&self.vocabulary)?)
        .with_extra("words", serde_json::to_value(self.question.table().words())?))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind(CHECKPOINT_KIND)?;
        let corrupt = |m: String| Error::CorruptCheckpoint(m);
        let config: VqaModelConfig =
            serde_json::from_value(ck.config.clone()).map_err(|e| corrupt(format!("config: {e}")))?;
        let section = |k: &str| {
            ck.extra
                .get(k)
                .cloned()
                .ok_or_else(|| corrupt(format!("missing `{k}` section")))
        };
        let vocabulary: AnswerVocabulary =
            serde_json::from_value(section("answers")?).map_err(|e| corrupt(format!("answers: {e}")))?;
        let words: Vec<String> =
            serde_json::from_value(section("words")?).map_err(|e| corrupt(format!("words: {e}")))?;
        let vectors = ck
            .tensors
            .get(WORD_TABLE_NAME)
            .ok_or_else(|| corrupt("missing word table".into()))?
            .flatten_all()?
            .to_vec1::<f32>()?;
        let table = WordTable::from_parts(words, vectors, config.word_dim)?;
        let model = Self::new(config, table, vocabulary, 0)?;
        model.store.load_all(&ck.tensors)?;
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax(scores: &[f32]) -> Option<usize> {
    let mut best: Option<(usize, f32)> = None;
    for (i, &s) in scores.iter().enumerate() {
        match best {
            Some((_, b)) if s <= b => {}
            _ => best = Some((i, s)),
        }
    }
    best.map(|(i, _)| i)
}

pub fn answer_for_logits<'v>(logits: &[f32], vocabulary: &'v AnswerVocabulary) -> Result<&'v str> {
    if vocabulary.is_empty() {
        return Err(Error::EmptyVocabulary);
    }
    if logits.len() != vocabulary.len() {
        return Err(Error::shape(format!(
            "{} logits for {} answers",
            logits.len(),
            vocabulary.len()
        )));
    }
    let i = argmax(logits).expect("non-empty");
    Ok(vocabulary.answer(i).expect("index in range"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_rules() {
        let vocab = AnswerVocabulary::from_answers(["no", "yes", "maybe"]);
        assert_eq!(answer_for_logits(&[0.1, 0.9, 0.3], &vocab).unwrap(), "yes");
        let two = AnswerVocabulary::from_answers(["a", "b"]);
        assert_eq!(answer_for_logits(&[0.5, 0.5], &two).unwrap(), "a");
        let empty = AnswerVocabulary::from_answers(Vec::<String>::new());
        assert!(matches!(answer_for_logits(&[], &empty), Err(Error::EmptyVocabulary)));
        assert_eq!(argmax(&[f32::NEG_INFINITY, -1.0, -1.0]), Some(1));
    }
}
