//! Training, evaluation and repetition on the fixture dataset.

mod common;

use medvqa::clip::{Backbone, ClipConfig, ClipModel, ModelScale};
use medvqa::data::{load_vqa_dataset, AnswerVocabulary, Dialect};
use medvqa::harness::{
    evaluate, evaluate_checkpoint, repeat_and_average, train_vqa, ExperimentConfig, ExperimentData, VisualBackbone,
};
use medvqa::vqa::{VqaModel, WordEmbeddings};
use medvqa::Error;

fn prepare(config: &ExperimentConfig) -> medvqa::Result<ExperimentData> {
    let (train, test) = load_vqa_dataset(&common::fixture("rad"), Dialect::Rad)?;
    let embeddings = WordEmbeddings::from_file(&common::fixture("glove_mini_16d.txt"))?;
    ExperimentData::prepare(config, train, test, &embeddings)
}

#[test]
fn repetitions_average_their_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let config = ExperimentConfig {
        repetitions: 3,
        seed_base: 5,
        ..common::tiny_experiment(common::tiny_backbone(tmp.path(), 0), 2)
    };
    let data = prepare(&config).unwrap();
    let (aggregate, runs) = repeat_and_average(&config, &data, &tmp.path().join("out")).unwrap();
    assert_eq!(aggregate.run_count, 3);
    assert_eq!(runs.iter().map(|r| r.seed).collect::<Vec<_>>(), [5, 6, 7]);
    let mean = runs
        .iter()
        .map(|r| r.evaluation.metrics.overall_accuracy.unwrap())
        .sum::<f64>()
        / 3.0;
    assert!((aggregate.mean_report.overall_accuracy.unwrap() - mean).abs() < 1e-12);
    assert!(tmp.path().join("out/aggregate.json").is_file());
    for r in &runs {
        assert_eq!(r.losses.len(), 2);
        assert!(r.dir.join("run_manifest.json").is_file());
    }
}

#[test]
fn saved_model_scores_like_the_live_one() {
    let tmp = tempfile::tempdir().unwrap();
    let config = common::tiny_experiment(common::tiny_backbone(tmp.path(), 1), 2);
    let data = prepare(&config).unwrap();
    let outcome = train_vqa(&config, &data, 0, &tmp.path().join("run")).unwrap();
    let live = evaluate(&outcome.model, &data.test, &data.vocabulary, &data.images).unwrap();
    let saved = evaluate_checkpoint(&outcome.final_checkpoint, &data.test, Some(&data.vocabulary)).unwrap();
    assert_eq!(live, saved);
    let best = VqaModel::load(&outcome.best_checkpoint).unwrap();
    assert_eq!(best.vocabulary(), &data.vocabulary);

    let other = AnswerVocabulary::from_answers(["yes", "no"]);
    assert!(matches!(
        evaluate(&outcome.model, &data.test, &other, &data.images),
        Err(Error::VocabularyMismatch)
    ));
}

#[test]
fn backbone_checkpoint_is_checked() {
    let tmp = tempfile::tempdir().unwrap();
    let unset = ExperimentConfig {
        checkpoint_in: None,
        ..common::tiny_experiment(tmp.path().join("x"), 1)
    };
    assert!(matches!(prepare(&unset), Err(Error::ConfigInvalid(_))));

    let missing = common::tiny_experiment(tmp.path().join("absent.safetensors"), 1);
    assert!(matches!(prepare(&missing), Err(Error::WeightsMissing(_))));

    let vit = tmp.path().join("vit.safetensors");
    ClipModel::new(
        ClipConfig::with_default_window(Backbone::VitB32, ModelScale::Tiny, 100),
        0,
    )
    .unwrap()
    .save(&vit)
    .unwrap();
    assert!(matches!(
        prepare(&common::tiny_experiment(vit.clone(), 1)),
        Err(Error::ConfigInvalid(_))
    ));
    let matched = ExperimentConfig {
        backbone: VisualBackbone::VitB32,
        ..common::tiny_experiment(vit, 1)
    };
    assert!(prepare(&matched).is_ok());

    assert!(matches!(
        VisualBackbone::MamlStubExcluded.encoder(),
        Err(Error::ConfigInvalid(_))
    ));
}
