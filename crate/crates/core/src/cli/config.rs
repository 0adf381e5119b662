//! Root configuration file, dotted-key overrides and path resolution.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::clip::PretrainConfig;
use crate::data::Dialect;
use crate::error::{Error, Result};
use crate::harness::ExperimentConfig;

/// Environment variable naming the default asset directory.
pub const ASSET_DIR_ENV: &str = "MEDVQA_ASSET_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Caption manifest for contrastive training.
    pub captions_train: Option<PathBuf>,
    /// Optional caption manifest for checkpoint selection.
    pub captions_val: Option<PathBuf>,
    /// Directory holding a VQA dataset in `dialect` layout.
    pub vqa_root: Option<PathBuf>,
    pub dialect: Dialect,
    /// Rows kept in question-type histograms.
    pub top_k: usize,
    /// Cap on records written by `dump-examples` (all when unset).
    pub max_samples: Option<usize>,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            captions_train: None,
            captions_val: None,
            vqa_root: None,
            dialect: Dialect::Rad,
            top_k: 5,
            max_samples: None,
        }
    }
}

/// Relative asset paths resolve against `MEDVQA_ASSET_DIR` when it is set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssetSection {
    /// BPE merge list for the text tower.
    pub tokenizer: Option<PathBuf>,
    /// Word-embedding text file for the question encoder.
    pub embeddings: Option<PathBuf>,
    /// General-domain dual-encoder weights; starting point for pretraining.
    pub weights: Option<PathBuf>,
    /// Trained VQA checkpoint used by `evaluate` and `dump-examples`.
    pub vqa_checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RootConfig {
    pub data: DataSection,
    pub pretrain: PretrainConfig,
    pub vqa: ExperimentConfig,
    pub assets: AssetSection,
}

fn config_error(key: impl Into<String>, reason: impl ToString) -> Error {
    Error::Config {
        key: key.into(),
        reason: reason.to_string(),
    }
}

/// Parses a JSON document into a [`RootConfig`], naming the offending key on
/// failure.
pub fn parse_config(value: Value) -> Result<RootConfig> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let key = e.path().to_string();
        config_error(if key == "." { "<root>".into() } else { key }, e.into_inner())
    })
}

pub fn read_config_file(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).map_err(|e| config_error("--config", format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| config_error("--config", format!("{}: {e}", path.display())))
}

/// The right-hand side of `key=value`: JSON when it parses, otherwise a bare
/// string.
fn override_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Applies `key=value` overrides. Every key must already exist in the
/// fully-populated default configuration.
pub fn apply_overrides(doc: &mut Value, overrides: &[String]) -> Result<()> {
    let schema = serde_json::to_value(RootConfig::default())?;
    for item in overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("override `{item}` is not of the form key=value")))?;
        let key = key.trim();
        let parts: Vec<&str> = key.split('.').collect();
        if parts.iter().any(|p| p.is_empty()) {
            return Err(config_error(key, "empty key segment"));
        }
        let mut probe = &schema;
        for p in &parts {
            probe = probe
                .get(p)
                .ok_or_else(|| config_error(key, "unknown configuration key"))?;
        }
        let mut cursor = &mut *doc;
        for p in &parts[..parts.len() - 1] {
            if !cursor.is_object() {
                return Err(config_error(key, "parent is not a section"));
            }
            cursor = cursor
                .as_object_mut()
                .unwrap()
                .entry(p.to_string())
                .or_insert_with(|| Value::Object(Default::default()));
        }
        let obj = cursor
            .as_object_mut()
            .ok_or_else(|| config_error(key, "parent is not a section"))?;
        obj.insert(parts[parts.len() - 1].to_string(), override_value(raw.trim()));
    }
    Ok(())
}

/// Rewrites relative paths: data and checkpoint paths against `base` (the
/// config file's directory), assets against `asset_dir` when given.
pub fn resolve_paths(config: &mut RootConfig, base: &Path, asset_dir: Option<&Path>) {
    let rel = |p: &mut Option<PathBuf>, root: &Path| {
        if let Some(path) = p {
            if path.is_relative() {
                *path = root.join(&*path);
            }
        }
    };
    rel(&mut config.data.captions_train, base);
    rel(&mut config.data.captions_val, base);
    rel(&mut config.data.vqa_root, base);
    rel(&mut config.pretrain.init_checkpoint, base);
    rel(&mut config.vqa.checkpoint_in, base);
    let assets = asset_dir.unwrap_or(base);
    rel(&mut config.assets.tokenizer, assets);
    rel(&mut config.assets.embeddings, assets);
    rel(&mut config.assets.weights, assets);
    rel(&mut config.assets.vqa_checkpoint, assets);
}

/// Returns the path configured under `key`, or a named error when it is unset
/// or does not exist.
pub fn require_path<'a>(key: &str, value: &'a Option<PathBuf>) -> Result<&'a Path> {
    let path = value
        .as_deref()
        .ok_or_else(|| config_error(key, "required but not set"))?;
    if !path.exists() {
        return Err(config_error(key, format!("{} does not exist", path.display())));
    }
    Ok(path)
}

pub fn optional_path<'a>(key: &str, value: &'a Option<PathBuf>) -> Result<Option<&'a Path>> {
    match value {
        None => Ok(None),
        Some(_) => require_path(key, value).map(Some),
    }
}
