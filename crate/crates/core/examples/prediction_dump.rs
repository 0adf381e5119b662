// Writes a prediction dump, reads it back and scores it per answer type.

use std::path::Path;

use medvqa::data::{load_vqa_dataset, Dialect};
use medvqa::harness::{compute_accuracy, render_table, PredictionDump, PredictionRow};

const FIXTURES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures");

pub fn run_example() -> medvqa::Result<()> {
    let (_, test) = load_vqa_dataset(&Path::new(FIXTURES).join("rad"), Dialect::Rad)?;
    // A stand-in predictor that always says "yes".
    let dump = PredictionDump {
        rows: test.records.iter().map(|r| PredictionRow::new(r, "yes")).collect(),
    };
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("predictions.csv");
    dump.write_csv(&path)?;
    let back = PredictionDump::read_csv(&path)?;
    assert_eq!(back, dump);

    let metrics = compute_accuracy(&back, &test.records)?;
    print!("{}", render_table(&[("always yes", &metrics)]));
    println!("{} failures", back.failures().rows.len());
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("prediction_dump failed");
}
