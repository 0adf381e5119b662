// End-to-end VQA on the fixture dataset: save a tiny visual backbone, train
// one seeded run, then score it on the test split.

use std::path::Path;

use medvqa::clip::{Backbone, ClipConfig, ClipModel, ModelScale};
use medvqa::data::{load_vqa_dataset, Dialect};
use medvqa::harness::{
    evaluate, render_table, train_vqa, ExperimentConfig, ExperimentData, ModelSettings, VisualBackbone,
};
use medvqa::vqa::WordEmbeddings;

const FIXTURES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures");

pub fn run_example() -> medvqa::Result<()> {
    let fixtures = Path::new(FIXTURES);
    let work = tempfile::tempdir()?;
    let backbone = work.path().join("backbone.safetensors");
    ClipModel::new(
        ClipConfig::with_default_window(Backbone::Rn50, ModelScale::Tiny, 628),
        0,
    )?
    .save(&backbone)?;

    let config = ExperimentConfig {
        epochs: Some(5),
        batch_size: Some(8),
        backbone: VisualBackbone::Rn50,
        checkpoint_in: Some(backbone),
        repetitions: 1,
        model: ModelSettings::tiny(),
        ..ExperimentConfig::default()
    };
    let (train, test) = load_vqa_dataset(&fixtures.join("rad"), Dialect::Rad)?;
    let embeddings = WordEmbeddings::from_file(&fixtures.join("glove_mini_16d.txt"))?;
    let data = ExperimentData::prepare(&config, train, test, &embeddings)?;

    let outcome = train_vqa(&config, &data, 0, &work.path().join("run_0"))?;
    for e in &outcome.losses {
        println!(
            "epoch {}  cls {:.4}  rec {:.4}  train acc {:.3}",
            e.epoch, e.cls_loss, e.rec_loss, e.train_accuracy
        );
    }
    let eval = evaluate(&outcome.model, &data.test, &data.vocabulary, &data.images)?;
    print!("{}", render_table(&[("seed 0", &eval.metrics)]));
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("train_vqa failed");
}
