use std::fs::{self, File};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, Once};

use serde::Serialize;
use serde_json::json;

use super::config::{optional_path, require_path, RootConfig};
use super::plot::histogram_svg;
use super::{CliInvocation, Command};
use crate::clip::run_pretraining;
use crate::data::{
    load_image_caption_corpus, load_vqa_dataset, question_type_histogram, verify_split_images, QuestionTypeHistogram,
};
use crate::error::{Error, Result};
use crate::harness::{
    dump_qualitative, environment_fingerprint, evaluate_checkpoint, head, render_table, repeat_and_average,
    ExperimentData, ImageBank,
};
use crate::tokenizer::BpeTokenizer;
use crate::vqa::{VqaModel, WordEmbeddings};

/// Checks that every path the subcommand reads is configured and present.
pub(crate) fn check_inputs(command: Command, c: &RootConfig) -> Result<()> {
    match command {
        Command::Pretrain => {
            require_path("data.captions_train", &c.data.captions_train)?;
            optional_path("data.captions_val", &c.data.captions_val)?;
            require_path("assets.tokenizer", &c.assets.tokenizer)?;
            optional_path("pretrain.init_checkpoint", &c.pretrain.init_checkpoint)?;
        }
        Command::Train => {
            require_path("data.vqa_root", &c.data.vqa_root)?;
            require_path("assets.embeddings", &c.assets.embeddings)?;
            require_path("vqa.checkpoint_in", &c.vqa.checkpoint_in)?;
        }
        Command::Evaluate | Command::DumpExamples => {
            require_path("data.vqa_root", &c.data.vqa_root)?;
            require_path("assets.vqa_checkpoint", &c.assets.vqa_checkpoint)?;
        }
        Command::Analyze | Command::PlotTypes => {
            require_path("data.vqa_root", &c.data.vqa_root)?;
        }
    }
    Ok(())
}

/// Creates `parent/name`, or `parent/name-1`, `parent/name-2`, ... when taken.
pub fn next_run_dir(parent: &Path, name: &str) -> Result<PathBuf> {
    fs::create_dir_all(parent).map_err(|e| write_failure(parent, e))?;
    for i in 0.. {
        let dir = if i == 0 {
            parent.join(name)
        } else {
            parent.join(format!("{name}-{i}"))
        };
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(write_failure(&dir, e)),
        }
    }
    unreachable!()
}

fn write_failure(path: &Path, e: impl ToString) -> Error {
    Error::WriteFailure {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").map_err(|e| write_failure(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| write_failure(path, e))
}

static LOG_SINK: Mutex<Option<File>> = Mutex::new(None);

/// Forwards log records to the current run's log file.
struct RunLog;

impl Write for RunLog {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        match LOG_SINK.lock().unwrap().as_mut() {
            Some(f) => f.write(buf),
            None => Ok(buf.len()),
        }
    }

    fn flush(&mut self) -> io::Result<()> {
        match LOG_SINK.lock().unwrap().as_mut() {
            Some(f) => f.flush(),
            None => Ok(()),
        }
    }
}

fn open_log(path: &Path) -> Result<()> {
    static INIT: Once = Once::new();
    let file = File::create(path).map_err(|e| write_failure(path, e))?;
    *LOG_SINK.lock().unwrap() = Some(file);
    INIT.call_once(|| {
        let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
            .target(env_logger::Target::Pipe(Box::new(RunLog)))
            .try_init();
    });
    Ok(())
}

fn write_histogram_csv(path: &Path, h: &QuestionTypeHistogram) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| write_failure(path, e))?;
    w.write_record(["question_type", "count"])
        .map_err(|e| write_failure(path, e))?;
    for (t, c) in &h.counts {
        w.write_record([t.as_str(), &c.to_string()])
            .map_err(|e| write_failure(path, e))?;
    }
    w.flush().map_err(|e| write_failure(path, e))
}

/// Runs the subcommand inside a fresh run directory under the output
/// directory and returns that directory. On failure the error is paired with
/// the log file path when one was opened.
pub fn dispatch(inv: &CliInvocation, config: &RootConfig) -> std::result::Result<PathBuf, (Error, Option<PathBuf>)> {
    let dir = next_run_dir(&inv.output_dir, inv.command.name()).map_err(|e| (e, None))?;
    let log = dir.join("medvqa.log");
    open_log(&log).map_err(|e| (e, None))?;
    log::info!("{} -> {}", inv.command.name(), dir.display());
    let result = run_command(inv, config, &dir);
    if let Err(e) = &result {
        log::error!("{e}");
    }
    let _ = RunLog.flush();
    result.map(|_| dir).map_err(|e| (e, Some(log)))
}

fn run_command(inv: &CliInvocation, c: &RootConfig, dir: &Path) -> Result<()> {
    write_json(
        &dir.join("run_manifest.json"),
        &json!({
            "command": inv.command.name(),
            "config_file": inv.config_path,
            "overrides": inv.overrides,
            "deterministic": inv.deterministic,
            "resolved_config": c,
            "resolved_schedule": c.vqa.schedule(),
            "environment": environment_fingerprint(),
        }),
    )?;
    match inv.command {
        Command::Pretrain => {
            let train = load_image_caption_corpus(c.data.captions_train.as_deref().unwrap())?;
            let val = c
                .data
                .captions_val
                .as_deref()
                .map(load_image_caption_corpus)
                .transpose()?;
            let tokenizer = BpeTokenizer::from_file(c.assets.tokenizer.as_deref().unwrap())?;
            let outcome = run_pretraining(
                &c.pretrain,
                &train.records,
                val.as_ref().map(|v| v.records.as_slice()),
                &tokenizer,
                dir,
            )?;
            if let Some(last) = outcome.losses.last() {
                log::info!("final train loss {:.6}", last.train_loss);
            }
        }
        Command::Train => {
            let (train, test) = load_vqa_dataset(c.data.vqa_root.as_deref().unwrap(), c.data.dialect)?;
            let embeddings = WordEmbeddings::from_file(c.assets.embeddings.as_deref().unwrap())?;
            let data = ExperimentData::prepare(&c.vqa, train, test, &embeddings)?;
            let (aggregate, _) = repeat_and_average(&c.vqa, &data, dir)?;
            let mut rows: Vec<(String, &_)> = aggregate
                .per_run
                .iter()
                .enumerate()
                .map(|(i, r)| (format!("run {i}"), r))
                .collect();
            rows.push(("mean".into(), &aggregate.mean_report));
            let labelled: Vec<(&str, &_)> = rows.iter().map(|(l, r)| (l.as_str(), *r)).collect();
            write_text(&dir.join("metrics.txt"), &render_table(&labelled))?;
        }
        Command::Evaluate => {
            let (_, test) = load_vqa_dataset(c.data.vqa_root.as_deref().unwrap(), c.data.dialect)?;
            let eval = evaluate_checkpoint(c.assets.vqa_checkpoint.as_deref().unwrap(), &test, None)?;
            write_json(&dir.join("metrics.json"), &eval.metrics)?;
            write_text(
                &dir.join("metrics.txt"),
                &render_table(&[("checkpoint", &eval.metrics)]),
            )?;
            eval.dump.write_csv(&dir.join("predictions.csv"))?;
        }
        Command::DumpExamples => {
            let (_, test) = load_vqa_dataset(c.data.vqa_root.as_deref().unwrap(), c.data.dialect)?;
            let samples = head(&test, c.data.max_samples.unwrap_or(usize::MAX));
            let model = VqaModel::load(c.assets.vqa_checkpoint.as_deref().unwrap())?;
            let images = ImageBank::load(
                &samples.records,
                model.config().clip.vision.resolution(),
                model.config().cdae.input_size,
            )?;
            dump_qualitative(
                &model,
                &samples,
                &images,
                &dir.join("predictions.csv"),
                inv.failures_only,
            )?;
        }
        Command::Analyze => {
            let (train, test) = load_vqa_dataset(c.data.vqa_root.as_deref().unwrap(), c.data.dialect)?;
            let overlap = verify_split_images(&train, &test);
            let train_types = question_type_histogram(&train, c.data.top_k)?;
            let test_types = question_type_histogram(&test, c.data.top_k)?;
            write_json(
                &dir.join("analysis.json"),
                &json!({
                    "overlap": overlap,
                    "train_question_types": train_types,
                    "test_question_types": test_types,
                    "train_records": train.len(),
                    "test_records": test.len(),
                }),
            )?;
            write_histogram_csv(&dir.join("question_types.csv"), &train_types)?;
        }
        Command::PlotTypes => {
            let (train, _) = load_vqa_dataset(c.data.vqa_root.as_deref().unwrap(), c.data.dialect)?;
            let h = question_type_histogram(&train, c.data.top_k)?;
            write_histogram_csv(&dir.join("question_types.csv"), &h)?;
            write_text(&dir.join("question_types.svg"), &histogram_svg(&h))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_dirs_never_clobber() {
        let tmp = tempfile::tempdir().unwrap();
        let a = next_run_dir(tmp.path(), "train").unwrap();
        let b = next_run_dir(tmp.path(), "train").unwrap();
        let c = next_run_dir(tmp.path(), "train").unwrap();
        assert_eq!(a, tmp.path().join("train"));
        assert_eq!(b, tmp.path().join("train-1"));
        assert_eq!(c, tmp.path().join("train-2"));
    }
}
