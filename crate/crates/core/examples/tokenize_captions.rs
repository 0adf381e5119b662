// Loads a caption manifest and tokenizes every caption into the fixed
// context window of the text tower.

use std::path::Path;

use medvqa::data::load_image_caption_corpus;
use medvqa::tokenizer::BpeTokenizer;

const FIXTURES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures");

pub fn run_example() -> medvqa::Result<()> {
    let corpus = load_image_caption_corpus(&Path::new(FIXTURES).join("captions/train.tsv"))?;
    let tokenizer = BpeTokenizer::from_file(&Path::new(FIXTURES).join("bpe_merges.txt"))?;
    println!(
        "{} captions, {} skipped, vocab {}",
        corpus.records.len(),
        corpus.missing.len(),
        tokenizer.vocab_size()
    );
    for record in corpus.records.iter().take(3) {
        let seq = tokenizer.tokenize_caption(&record.caption, 76)?;
        assert_eq!(seq.ids.len(), 76);
        println!(
            "{:>10}  {:>2} tokens  {:?}",
            record.image_id,
            seq.length,
            &seq.ids[..seq.length.min(8)]
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("tokenize_captions failed");
}
