// Split-overlap check and question-type histograms for both dataset dialects.

use std::path::Path;

use medvqa::data::{load_vqa_dataset, question_type_histogram, verify_split_images, Dialect};

const FIXTURES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures");

pub fn run_example() -> medvqa::Result<()> {
    for (dir, dialect) in [("rad", Dialect::Rad), ("slake", Dialect::Slake)] {
        let (train, test) = load_vqa_dataset(&Path::new(FIXTURES).join(dir), dialect)?;
        let overlap = verify_split_images(&train, &test);
        println!(
            "{dir}: {} train / {} test, test images seen in train {:.2}, disjoint {}",
            train.len(),
            test.len(),
            overlap.test_images_in_train,
            overlap.disjoint
        );
        for (t, c) in question_type_histogram(&train, 3)?.counts {
            println!("  {t:<12} {c}");
        }
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("analyze_dataset failed");
}
