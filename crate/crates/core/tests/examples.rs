//! Every example compiles into this test binary and runs to completion.

mod tokenize_captions {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/tokenize_captions.rs"));
}
mod contrastive_loss {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/contrastive_loss.rs"));
}
mod pretrain_toy {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/pretrain_toy.rs"));
}
mod ban_fusion {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/ban_fusion.rs"));
}
mod train_vqa {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/train_vqa.rs"));
}
mod analyze_dataset {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/analyze_dataset.rs"));
}
mod prediction_dump {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/prediction_dump.rs"));
}

#[test]
fn tokenize_captions_runs() {
    tokenize_captions::run_example().expect("tokenize_captions");
}

#[test]
fn contrastive_loss_runs() {
    contrastive_loss::run_example().expect("contrastive_loss");
}

#[test]
fn pretrain_toy_runs() {
    pretrain_toy::run_example().expect("pretrain_toy");
}

#[test]
fn ban_fusion_runs() {
    ban_fusion::run_example().expect("ban_fusion");
}

#[test]
fn train_vqa_runs() {
    train_vqa::run_example().expect("train_vqa");
}

#[test]
fn analyze_dataset_runs() {
    analyze_dataset::run_example().expect("analyze_dataset");
}

#[test]
fn prediction_dump_runs() {
    prediction_dump::run_example().expect("prediction_dump");
}
