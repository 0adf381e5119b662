//! Shared builders for integration tests: synthetic datasets and tiny
//! backbone checkpoints.

#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use medvqa::clip::{Backbone, ClipConfig, ClipModel, ModelScale};
use medvqa::harness::{ExperimentConfig, ModelSettings, VisualBackbone};
use serde_json::json;

pub const FIXTURES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures");

pub fn fixture(rel: &str) -> PathBuf {
    Path::new(FIXTURES).join(rel)
}

/// Vocabulary size of the bundled merges file.
pub const FIXTURE_VOCAB: usize = 628;

/// A 64×64 image whose quadrants encode the bits of `i`.
fn pattern(i: usize) -> RgbImage {
    let base = (40 + 13 * i % 160) as u8;
    RgbImage::from_fn(64, 64, |x, y| {
        let quadrant = (x / 32 + 2 * (y / 32)) as usize;
        let on = (i >> quadrant) & 1 == 1;
        let v = if on { 230 } else { base };
        Rgb([v, v / 2 + (x as u8 % 8), 255 - v])
    })
}

const QUESTIONS: [(&str, &str, &str); 2] = [
    ("is there an abnormality in the image?", "CLOSED", "PRES"),
    ("which organ is shown in this image?", "OPEN", "ORGAN"),
];
const CLOSED: [&str; 2] = ["yes", "no"];
const OPEN: [&str; 3] = ["chest", "head", "abdomen"];

fn record(qid: usize, image: usize) -> serde_json::Value {
    let (question, answer_type, question_type) = QUESTIONS[qid % 2];
    let answer = if qid.is_multiple_of(2) {
        CLOSED[(image / 2) % 2]
    } else {
        OPEN[image % 3]
    };
    json!({
        "qid": qid,
        "image_name": format!("img{image:03}.png"),
        "question": question,
        "answer": answer,
        "answer_type": answer_type,
        "question_type": question_type,
    })
}

/// Writes a VQA-RAD-layout dataset with `n` training records, each on its own
/// image, and a four-record test split that reuses training images.
pub fn synthetic_rad(root: &Path, n: usize) -> PathBuf {
    let images = root.join("images");
    fs::create_dir_all(&images).unwrap();
    for i in 0..n {
        pattern(i).save(images.join(format!("img{i:03}.png"))).unwrap();
    }
    let train: Vec<_> = (0..n).map(|i| record(i, i)).collect();
    let test: Vec<_> = (0..4).map(|i| record(n + i, i)).collect();
    fs::write(
        root.join("trainset.json"),
        serde_json::to_string_pretty(&train).unwrap(),
    )
    .unwrap();
    fs::write(root.join("testset.json"), serde_json::to_string_pretty(&test).unwrap()).unwrap();
    root.to_path_buf()
}

/// Saves a randomly initialised tiny RN50 dual encoder and returns its path.
pub fn tiny_backbone(dir: &Path, seed: u64) -> PathBuf {
    let path = dir.join("backbone.safetensors");
    ClipModel::new(
        ClipConfig::with_default_window(Backbone::Rn50, ModelScale::Tiny, FIXTURE_VOCAB),
        seed,
    )
    .unwrap()
    .save(&path)
    .unwrap();
    path
}

/// Tiny-model experiment on `checkpoint` with a short explicit schedule.
pub fn tiny_experiment(checkpoint: PathBuf, epochs: usize) -> ExperimentConfig {
    ExperimentConfig {
        epochs: Some(epochs),
        batch_size: Some(8),
        backbone: VisualBackbone::Rn50,
        checkpoint_in: Some(checkpoint),
        repetitions: 1,
        deterministic: true,
        model: ModelSettings::tiny(),
        ..ExperimentConfig::default()
    }
}
