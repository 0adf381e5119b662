// A few epochs of contrastive fine-tuning of a tiny dual encoder on the
// fixture caption corpus.

use std::path::Path;

use medvqa::clip::{run_pretraining, Backbone, ModelScale, PretrainConfig};
use medvqa::data::load_image_caption_corpus;
use medvqa::tokenizer::BpeTokenizer;

const FIXTURES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures");

pub fn run_example() -> medvqa::Result<()> {
    let fixtures = Path::new(FIXTURES);
    let train = load_image_caption_corpus(&fixtures.join("captions/train.tsv"))?;
    let val = load_image_caption_corpus(&fixtures.join("captions/val.tsv"))?;
    let tokenizer = BpeTokenizer::from_file(&fixtures.join("bpe_merges.txt"))?;

    let config = PretrainConfig {
        epochs: 3,
        batch_size: 8,
        learning_rate: 1e-4,
        backbone: Backbone::VitB32,
        scale: ModelScale::Tiny,
        ..PretrainConfig::default()
    };
    let out = tempfile::tempdir()?;
    let outcome = run_pretraining(&config, &train.records, Some(&val.records), &tokenizer, out.path())?;
    for e in &outcome.losses {
        println!(
            "epoch {}  train {:.4}  val {:.4}",
            e.epoch,
            e.train_loss,
            e.val_loss.unwrap_or(f64::NAN)
        );
    }
    println!("logit scale {:.3}", outcome.model.logit_scale()?);
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("pretrain_toy failed");
}
