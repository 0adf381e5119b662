//! Training, evaluation and repetition of VQA experiments.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use candle_core::Tensor;
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::{ExperimentConfig, Schedule};
use super::metrics::{compute_accuracy, MetricsReport, PredictionDump, PredictionRow, RunAggregate};
use crate::checkpoint::Checkpoint;
use crate::clip::{ClipConfig, CHECKPOINT_KIND as CLIP_KIND};
use crate::data::{
    build_answer_vocabulary, load_and_preprocess_image, load_grayscale, AnswerVocabulary, DatasetSplit, Normalization,
    VqaRecord,
};
use crate::error::{Error, Result};
use crate::vqa::{argmax, one_hot, vqa_loss, Mode, VqaInputs, VqaModel, VqaModelConfig, WordEmbeddings, WordTable};

const EVAL_BATCH: usize = 32;

/// Preprocessed images keyed by path: the visual-tower view and the
/// low-resolution grayscale view.
#[derive(Debug, Clone)]
pub struct ImageBank {
    resolution: usize,
    low_size: usize,
    index: HashMap<PathBuf, usize>,
    full: Tensor,
    low: Tensor,
}

impl ImageBank {
    pub fn load<'a>(
        records: impl IntoIterator<Item = &'a VqaRecord>,
        resolution: usize,
        low_size: usize,
    ) -> Result<Self> {
        let mut paths: Vec<PathBuf> = Vec::new();
        let mut index = HashMap::new();
        for r in records {
            if !index.contains_key(&r.image_path) {
                index.insert(r.image_path.clone(), paths.len());
                paths.push(r.image_path.clone());
            }
        }
        if paths.is_empty() {
            return Err(Error::EmptySplit);
        }
        let loaded = paths
            .par_iter()
            .map(|p| {
                Ok((
                    load_and_preprocess_image(p, resolution, Normalization::CLIP)?,
                    load_grayscale(p, low_size)?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let (full, low): (Vec<Tensor>, Vec<Tensor>) = loaded.into_iter().unzip();
        Ok(Self {
            resolution,
            low_size,
            index,
            full: Tensor::stack(&full, 0)?,
            low: Tensor::stack(&low, 0)?,
        })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn low_size(&self) -> usize {
        self.low_size
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    /// Image tensors for `records`, in order.
    pub fn batch<'a>(&self, records: impl IntoIterator<Item = &'a VqaRecord>) -> Result<(Tensor, Tensor)> {
        let ids = records
            .into_iter()
            .map(|r| {
                self.index
                    .get(&r.image_path)
                    .map(|&i| i as u32)
                    .ok_or_else(|| Error::MissingFile(r.image_path.clone()))
            })
            .collect::<Result<Vec<u32>>>()?;
        let ids = Tensor::new(ids, self.full.device())?;
        Ok((self.full.index_select(&ids, 0)?, self.low.index_select(&ids, 0)?))
    }
}

/// Everything a run needs besides its seed: splits, answer vocabulary, word
/// table, backbone weights and preloaded images.
#[derive(Debug)]
pub struct ExperimentData {
    pub train: DatasetSplit,
    pub test: DatasetSplit,
    pub vocabulary: AnswerVocabulary,
    pub words: WordTable,
    pub backbone: Checkpoint,
    pub backbone_config: ClipConfig,
    pub images: ImageBank,
}

impl ExperimentData {
    /// Builds the answer vocabulary from `train` and the word table from the
    /// questions of both splits, loads the backbone checkpoint named in
    /// `config`, and preprocesses every referenced image.
    pub fn prepare(
        config: &ExperimentConfig,
        train: DatasetSplit,
        test: DatasetSplit,
        embeddings: &WordEmbeddings,
    ) -> Result<Self> {
        config.validate()?;
        let path = config
            .checkpoint_in
            .as_ref()
            .ok_or_else(|| Error::ConfigInvalid("vqa.checkpoint_in must name a backbone checkpoint".into()))?;
        let backbone = Checkpoint::load(path)?;
        backbone.expect_kind(CLIP_KIND)?;
        let backbone_config: ClipConfig = serde_json::from_value(backbone.config.clone())
            .map_err(|e| Error::CorruptCheckpoint(format!("backbone config: {e}")))?;
        let wanted = config.backbone.encoder()?;
        if backbone_config.backbone != wanted {
            return Err(Error::ConfigInvalid(format!(
                "checkpoint holds a {} backbone, config asks for {wanted}",
                backbone_config.backbone
            )));
        }
        let vocabulary = build_answer_vocabulary(&train)?;
        let words = WordTable::build(
            embeddings,
            train.records.iter().chain(&test.records).map(|r| r.question.as_str()),
        );
        let images = ImageBank::load(
            train.records.iter().chain(&test.records),
            backbone_config.vision.resolution(),
            config.model.cdae.input_size,
        )?;
        Ok(Self {
            train,
            test,
            vocabulary,
            words,
            backbone,
            backbone_config,
            images,
        })
    }

    pub fn model_config(&self, config: &ExperimentConfig) -> VqaModelConfig {
        VqaModelConfig {
            clip: self.backbone_config.clone(),
            cdae: config.model.cdae.clone(),
            ban: config.model.ban.clone(),
            hidden: config.model.hidden,
            max_tokens: config.model.max_tokens,
            word_dim: self.words.dim(),
            answers: self.vocabulary.len(),
        }
    }

    fn inputs(&self, model: &VqaModel, records: &[&VqaRecord]) -> Result<VqaInputs> {
        let (image_full, image_low) = self.images.batch(records.iter().copied())?;
        let questions = records
            .iter()
            .map(|r| model.question_encoder().tokenize(&r.question))
            .collect::<Result<Vec<_>>>()?;
        Ok(VqaInputs {
            image_full,
            image_low,
            questions,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VqaEpochLoss {
    pub epoch: usize,
    pub cls_loss: f64,
    pub rec_loss: f64,
    pub vqa_loss: f64,
    pub train_accuracy: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: VqaModel,
    pub final_checkpoint: PathBuf,
    pub best_checkpoint: PathBuf,
    pub loss_log: PathBuf,
    pub manifest: PathBuf,
    pub losses: Vec<VqaEpochLoss>,
}

pub fn environment_fingerprint() -> serde_json::Value {
    json!({
        "crate": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "os": std::env::consts::OS,
        "arch": std::env::consts::ARCH,
        "device": "cpu",
    })
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::WriteFailure {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

fn write_vqa_loss_log(path: &Path, losses: &[VqaEpochLoss]) -> Result<()> {
    let fail = |e: csv::Error| Error::WriteFailure {
        path: path.to_path_buf(),
        reason: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(fail)?;
    w.write_record(["epoch", "cls_loss", "rec_loss", "vqa_loss", "train_accuracy"])
        .map_err(fail)?;
    for l in losses {
        w.write_record([
            l.epoch.to_string(),
            format!("{:.9}", l.cls_loss),
            format!("{:.9}", l.rec_loss),
            format!("{:.9}", l.vqa_loss),
            format!("{:.6}", l.train_accuracy),
        ])
        .map_err(fail)?;
    }
    w.flush().map_err(|e| Error::WriteFailure {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Trains one model with `seed` and writes `final.safetensors`,
/// `best.safetensors` (lowest epoch training loss), `loss_log.csv` and
/// `run_manifest.json` into `out_dir`.
pub fn train_vqa(config: &ExperimentConfig, data: &ExperimentData, seed: u64, out_dir: &Path) -> Result<TrainOutcome> {
    config.validate()?;
    if data.train.is_empty() {
        return Err(Error::EmptySplit);
    }
    let Schedule {
        epochs,
        batch_size,
        learning_rate,
    } = config.schedule();
    fs::create_dir_all(out_dir).map_err(|e| Error::CheckpointWriteFailure {
        path: out_dir.to_path_buf(),
        reason: e.to_string(),
    })?;

    let model_config = data.model_config(config);
    let model = VqaModel::new(model_config.clone(), data.words.clone(), data.vocabulary.clone(), seed)?;
    model.load_backbone(&data.backbone)?;

    let manifest = out_dir.join("run_manifest.json");
    write_json(
        &manifest,
        &json!({
            "experiment": config,
            "resolved": {
                "profile": config.profile,
                "epochs": epochs,
                "batch_size": batch_size,
                "learning_rate": learning_rate,
            },
            "seed": seed,
            "evaluation_checkpoint": "final",
            "model": model_config,
            "train_records": data.train.len(),
            "answers": data.vocabulary.len(),
            "environment": environment_fingerprint(),
        }),
    )?;

    let targets: Vec<Option<usize>> = data
        .train
        .records
        .iter()
        .map(|r| data.vocabulary.index_of(&r.answer))
        .collect();
    let mut opt = AdamW::new(
        model.store().trainable_vars(),
        ParamsAdamW {
            lr: learning_rate,
            weight_decay: 0.0,
            ..Default::default()
        },
    )?;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(seed);
    shuffle_rng.set_stream(1);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(seed);
    noise_rng.set_stream(2);

    let final_checkpoint = out_dir.join("final.safetensors");
    let best_checkpoint = out_dir.join("best.safetensors");
    let loss_log = out_dir.join("loss_log.csv");
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut losses = Vec::with_capacity(epochs);
    let mut best = f64::INFINITY;

    for epoch in 1..=epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut cls, mut rec, mut total, mut hits) = (0.0, 0.0, 0.0, 0usize);
        for idx in order.chunks(batch_size) {
            let records: Vec<&VqaRecord> = idx.iter().map(|&i| &data.train.records[i]).collect();
            let inputs = data.inputs(&model, &records)?;
            let batch_targets: Vec<Option<usize>> = idx.iter().map(|&i| targets[i]).collect();
            let target = one_hot(&batch_targets, data.vocabulary.len())?;
            let out = model.forward(&inputs, Mode::Train, &mut noise_rng)?;
            let loss = vqa_loss(
                &out.logits,
                &target,
                &out.reconstruction.reconstruction,
                &out.reconstruction.original,
            )?;
            opt.backward_step(&loss.total)?;
            let n = idx.len() as f64;
            cls += loss.report.cls_loss * n;
            rec += loss.report.rec_loss * n;
            total += loss.report.vqa_loss * n;
            for (row, t) in out.logits.to_vec2::<f32>()?.iter().zip(&batch_targets) {
                hits += usize::from(argmax(row) == *t);
            }
        }
        let n = data.train.len() as f64;
        let entry = VqaEpochLoss {
            epoch,
            cls_loss: cls / n,
            rec_loss: rec / n,
            vqa_loss: total / n,
            train_accuracy: hits as f64 / n,
        };
        log::info!(
            "vqa epoch {epoch}/{epochs}: loss {:.5} (cls {:.5}, rec {:.5}), train acc {:.3}",
            entry.vqa_loss,
            entry.cls_loss,
            entry.rec_loss,
            entry.train_accuracy
        );
        losses.push(entry);
        if entry.vqa_loss < best {
            best = entry.vqa_loss;
            model.save(&best_checkpoint)?;
        }
        write_vqa_loss_log(&loss_log, &losses)?;
    }
    model.save(&final_checkpoint)?;

    Ok(TrainOutcome {
        model,
        final_checkpoint,
        best_checkpoint,
        loss_log,
        manifest,
        losses,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub metrics: MetricsReport,
    pub dump: PredictionDump,
}

/// Predicts every record of `split` once in evaluation mode. Gold answers
/// outside the vocabulary can never be matched and count as incorrect.
pub fn evaluate(
    model: &VqaModel,
    split: &DatasetSplit,
    vocabulary: &AnswerVocabulary,
    images: &ImageBank,
) -> Result<Evaluation> {
    if model.vocabulary() != vocabulary {
        return Err(Error::VocabularyMismatch);
    }
    let mut rows = Vec::with_capacity(split.len());
    for chunk in split.records.chunks(EVAL_BATCH) {
        let (image_full, image_low) = images.batch(chunk)?;
        let questions = chunk
            .iter()
            .map(|r| model.question_encoder().tokenize(&r.question))
            .collect::<Result<Vec<_>>>()?;
        let answers = model.predict(&VqaInputs {
            image_full,
            image_low,
            questions,
        })?;
        for (rec, answer) in chunk.iter().zip(answers) {
            let mut row = PredictionRow::new(rec, &answer);
            row.correct &= vocabulary.index_of(&rec.answer).is_some();
            rows.push(row);
        }
    }
    let dump = PredictionDump { rows };
    Ok(Evaluation {
        metrics: compute_accuracy(&dump, &split.records)?,
        dump,
    })
}

/// Evaluates a saved VQA checkpoint, preprocessing the split's images at the
/// checkpoint's resolutions.
pub fn evaluate_checkpoint(
    path: &Path,
    split: &DatasetSplit,
    vocabulary: Option<&AnswerVocabulary>,
) -> Result<Evaluation> {
    let model = VqaModel::load(path)?;
    let images = ImageBank::load(
        &split.records,
        model.config().clip.vision.resolution(),
        model.config().cdae.input_size,
    )?;
    let vocab = vocabulary.unwrap_or(model.vocabulary()).clone();
    evaluate(&model, split, &vocab, &images)
}

/// Writes the predictions for `samples` to `out`, optionally keeping only the
/// incorrect rows.
pub fn dump_qualitative(
    model: &VqaModel,
    samples: &DatasetSplit,
    images: &ImageBank,
    out: &Path,
    failures_only: bool,
) -> Result<PredictionDump> {
    let eval = evaluate(model, samples, model.vocabulary(), images)?;
    let dump = if failures_only { eval.dump.failures() } else { eval.dump };
    dump.write_csv(out)?;
    Ok(dump)
}

#[derive(Debug)]
pub struct RunResult {
    pub seed: u64,
    pub dir: PathBuf,
    pub losses: Vec<VqaEpochLoss>,
    pub evaluation: Evaluation,
}

/// Trains and evaluates `config.repetitions` models, run `i` seeded with
/// `seed_base + i` and written to `out_dir/run_i`. The final-epoch model of
/// each run is the one evaluated.
pub fn repeat_and_average(
    config: &ExperimentConfig,
    data: &ExperimentData,
    out_dir: &Path,
) -> Result<(RunAggregate, Vec<RunResult>)> {
    config.validate()?;
    let mut runs = Vec::with_capacity(config.repetitions);
    for i in 0..config.repetitions {
        let seed = config.run_seed(i);
        let dir = out_dir.join(format!("run_{i}"));
        let result = (|| {
            let trained = train_vqa(config, data, seed, &dir)?;
            let evaluation = evaluate(&trained.model, &data.test, &data.vocabulary, &data.images)?;
            write_json(&dir.join("metrics.json"), &evaluation.metrics)?;
            evaluation.dump.write_csv(&dir.join("predictions.csv"))?;
            Ok(RunResult {
                seed,
                dir: dir.clone(),
                losses: trained.losses,
                evaluation,
            })
        })()
        .map_err(|e: Error| Error::Run {
            index: i,
            source: Box::new(e),
        })?;
        runs.push(result);
    }
    let aggregate = RunAggregate::from_runs(runs.iter().map(|r| r.evaluation.metrics.clone()).collect())?;
    write_json(&out_dir.join("aggregate.json"), &aggregate)?;
    Ok((aggregate, runs))
}

/// `DatasetSplit` restricted to the first `n` records.
pub fn head(split: &DatasetSplit, n: usize) -> DatasetSplit {
    DatasetSplit::new(split.name, split.records.iter().take(n).cloned().collect())
}
