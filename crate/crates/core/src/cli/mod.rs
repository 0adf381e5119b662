//! Command-line front end: argument parsing, configuration and dispatch.
//!
//! Exit codes: `0` success, `1` runtime failure, `2` usage or configuration
//! error.

mod config;
mod dispatch;
mod plot;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::{
    apply_overrides, parse_config, read_config_file, resolve_paths, AssetSection, DataSection, RootConfig,
    ASSET_DIR_ENV,
};
pub use dispatch::{dispatch, next_run_dir};
pub use plot::histogram_svg;

use crate::error::{Error, Result};

#[derive(Debug, Parser)]
#[command(
    name = "medvqa",
    version,
    about = "Contrastive pretraining and medical VQA experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: CommandLine,
}

#[derive(Debug, Clone, Args)]
struct Common {
    /// JSON configuration file.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override a configuration value, e.g. `--set vqa.epochs=5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Parent directory for the run directory.
    #[arg(long, value_name = "DIR", default_value = "runs")]
    output: PathBuf,
    /// Request reproducible execution.
    #[arg(long)]
    deterministic: bool,
    /// Seed for pretraining and the first VQA repetition.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum CommandLine {
    /// Contrastive fine-tuning on an image-caption corpus.
    Pretrain(Common),
    /// Train and evaluate VQA models over seeded repetitions.
    Train(Common),
    /// Score a trained VQA checkpoint on the test split.
    Evaluate(Common),
    /// Split overlap and question-type statistics of a VQA dataset.
    Analyze(Common),
    /// Write per-question predictions of a trained checkpoint.
    DumpExamples {
        #[command(flatten)]
        common: Common,
        /// Keep only incorrect predictions.
        #[arg(long)]
        failures_only: bool,
    },
    /// Question-type histogram as CSV plus an SVG bar chart.
    PlotTypes(Common),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Pretrain,
    Train,
    Evaluate,
    Analyze,
    DumpExamples,
    PlotTypes,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Pretrain => "pretrain",
            Command::Train => "train",
            Command::Evaluate => "evaluate",
            Command::Analyze => "analyze",
            Command::DumpExamples => "dump-examples",
            Command::PlotTypes => "plot-types",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CliInvocation {
    pub command: Command,
    pub config_path: Option<PathBuf>,
    pub overrides: Vec<String>,
    pub output_dir: PathBuf,
    pub deterministic: bool,
    pub seed: Option<u64>,
    pub failures_only: bool,
}

/// Parses arguments (program name first), loads the configuration, applies
/// overrides and flags, resolves paths and validates the result.
pub fn parse_and_validate<I, S>(argv: I) -> Result<(CliInvocation, RootConfig)>
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv).map_err(|e| Error::Usage(e.to_string()))?;
    let (command, common, failures_only) = match cli.command {
        CommandLine::Pretrain(c) => (Command::Pretrain, c, false),
        CommandLine::Train(c) => (Command::Train, c, false),
        CommandLine::Evaluate(c) => (Command::Evaluate, c, false),
        CommandLine::Analyze(c) => (Command::Analyze, c, false),
        CommandLine::DumpExamples { common, failures_only } => (Command::DumpExamples, common, failures_only),
        CommandLine::PlotTypes(c) => (Command::PlotTypes, c, false),
    };
    let invocation = CliInvocation {
        command,
        config_path: common.config,
        overrides: common.overrides,
        output_dir: common.output,
        deterministic: common.deterministic,
        seed: common.seed,
        failures_only,
    };

    let mut doc = match &invocation.config_path {
        Some(p) => read_config_file(p)?,
        None => serde_json::json!({}),
    };
    apply_overrides(&mut doc, &invocation.overrides)?;
    let mut config = parse_config(doc)?;
    if let Some(seed) = invocation.seed {
        config.pretrain.seed = seed;
        config.vqa.seed_base = seed;
    }
    if invocation.deterministic {
        config.vqa.deterministic = true;
    }
    let base = invocation
        .config_path
        .as_deref()
        .and_then(|p| p.parent())
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("."));
    let asset_dir = std::env::var_os(ASSET_DIR_ENV).map(PathBuf::from);
    resolve_paths(&mut config, &base, asset_dir.as_deref());
    if config.pretrain.init_checkpoint.is_none() {
        config.pretrain.init_checkpoint = config.assets.weights.clone();
    }
    let named = |section: &str, r: Result<()>| {
        r.map_err(|e| Error::Config {
            key: section.to_string(),
            reason: e.to_string(),
        })
    };
    named("pretrain", config.pretrain.validate())?;
    named("vqa", config.vqa.validate())?;
    dispatch::check_inputs(command, &config)?;
    Ok((invocation, config))
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Usage(_) | Error::Config { .. } => 2,
        _ => 1,
    }
}

/// Full CLI entry point; returns the process exit code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let argv: Vec<S> = argv.into_iter().collect();
    if let Err(e) = Cli::try_parse_from(argv.clone()) {
        use clap::error::ErrorKind;
        let _ = e.print();
        return match e.kind() {
            ErrorKind::DisplayHelp
            | ErrorKind::DisplayVersion
            | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => 0,
            _ => 2,
        };
    }
    let (invocation, config) = match parse_and_validate(argv) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };
    match dispatch(&invocation, &config) {
        Ok(dir) => {
            println!("{}", dir.display());
            0
        }
        Err((e, log)) => {
            match log {
                Some(log) => eprintln!("error: {e} (log: {})", log.display()),
                None => eprintln!("error: {e}"),
            }
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_switch_resolves_schedule() {
        let root = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/rad");
        let set_root = format!("data.vqa_root={root}");
        let (inv, cfg) = parse_and_validate([
            "medvqa",
            "analyze",
            "--set",
            &set_root,
            "--set",
            "vqa.profile=qcr",
            "--seed",
            "9",
        ])
        .unwrap();
        assert_eq!(inv.command, Command::Analyze);
        assert_eq!(cfg.vqa.schedule().epochs, 200);
        assert_eq!(cfg.vqa.seed_base, 9);
    }

    #[test]
    fn usage_errors() {
        for argv in [
            vec!["medvqa", "frobnicate"],
            vec!["medvqa", "train", "--failures-only"],
            vec!["medvqa", "train", "--bogus"],
        ] {
            let e = parse_and_validate(argv).unwrap_err();
            assert!(matches!(e, Error::Usage(_)), "{e:?}");
            assert_eq!(exit_code(&e), 2);
        }
    }
}
