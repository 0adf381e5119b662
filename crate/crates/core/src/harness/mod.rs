//! VQA experiment orchestration: schedules, seeded repetitions, accuracy
//! reports and prediction dumps.

mod config;
mod metrics;
mod run;

pub use config::{ExperimentConfig, ModelSettings, Profile, Schedule, VisualBackbone};
pub use metrics::{compute_accuracy, render_table, MetricsReport, PredictionDump, PredictionRow, RunAggregate};
pub use run::{
    dump_qualitative, environment_fingerprint, evaluate, evaluate_checkpoint, head, repeat_and_average, train_vqa,
    Evaluation, ExperimentData, ImageBank, RunResult, TrainOutcome, VqaEpochLoss,
};
