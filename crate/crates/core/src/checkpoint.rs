//! Self-describing checkpoint container.
//!
//! A checkpoint is a safetensors file whose header metadata carries a format
//! tag, the kind of model stored, the model configuration as JSON, and any
//! extra JSON sections (for instance an embedded answer vocabulary). Tensors
//! are stored as little-endian f32.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use safetensors::tensor::{Dtype, SafeTensors, TensorView};
use serde_json::Value;

use crate::error::{Error, Result};

pub const FORMAT_TAG: &str = "medvqa-checkpoint/1";
const KEY_FORMAT: &str = "format";
const KEY_KIND: &str = "kind";
const KEY_CONFIG: &str = "config";
const EXTRA_PREFIX: &str = "extra.";

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub kind: String,
    pub config: Value,
    pub extra: BTreeMap<String, Value>,
    pub tensors: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn new(kind: &str, config: Value, tensors: BTreeMap<String, Tensor>) -> Self {
        Self {
            kind: kind.to_string(),
            config,
            extra: BTreeMap::new(),
            tensors,
        }
    }

    pub fn with_extra(mut self, key: &str, value: Value) -> Self {
        self.extra.insert(key.to_string(), value);
        self
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let fail = |reason: String| Error::CheckpointWriteFailure {
            path: path.to_path_buf(),
            reason,
        };
        let mut buffers: Vec<(String, Vec<usize>, Vec<u8>)> = Vec::with_capacity(self.tensors.len());
        for (name, t) in &self.tensors {
            let values = t
                .to_dtype(DType::F32)
                .and_then(|t| t.flatten_all())
                .and_then(|t| t.to_vec1::<f32>())
                .map_err(|e| fail(e.to_string()))?;
            let bytes = values.iter().flat_map(|v| v.to_le_bytes()).collect();
            buffers.push((name.clone(), t.dims().to_vec(), bytes));
        }
        let views = buffers
            .iter()
            .map(|(name, shape, bytes)| {
                TensorView::new(Dtype::F32, shape.clone(), bytes)
                    .map(|v| (name.as_str(), v))
                    .map_err(|e| fail(e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut meta = HashMap::new();
        meta.insert(KEY_FORMAT.to_string(), FORMAT_TAG.to_string());
        meta.insert(KEY_KIND.to_string(), self.kind.clone());
        meta.insert(KEY_CONFIG.to_string(), self.config.to_string());
        for (k, v) in &self.extra {
            meta.insert(format!("{EXTRA_PREFIX}{k}"), v.to_string());
        }
        let bytes = safetensors::tensor::serialize(views, Some(meta)).map_err(|e| fail(e.to_string()))?;
        fs::write(path, bytes).map_err(|e| fail(e.to_string()))
    }

    /// Reads a checkpoint. An absent file is [`Error::WeightsMissing`]; anything
    /// unreadable or mislabelled is [`Error::CorruptCheckpoint`].
    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::WeightsMissing(path.to_path_buf()));
        }
        let raw = fs::read(path)?;
        let corrupt = |msg: String| Error::CorruptCheckpoint(format!("{}: {msg}", path.display()));
        let st = SafeTensors::deserialize(&raw).map_err(|e| corrupt(e.to_string()))?;
        let (_, header) = SafeTensors::read_metadata(&raw).map_err(|e| corrupt(e.to_string()))?;
        let meta = header
            .metadata()
            .clone()
            .ok_or_else(|| corrupt("no metadata header".into()))?;
        match meta.get(KEY_FORMAT) {
            Some(tag) if tag == FORMAT_TAG => {}
            Some(tag) => return Err(corrupt(format!("unsupported format `{tag}`"))),
            None => return Err(corrupt("missing format tag".into())),
        }
        let kind = meta
            .get(KEY_KIND)
            .cloned()
            .ok_or_else(|| corrupt("missing kind".into()))?;
        let config = meta
            .get(KEY_CONFIG)
            .map(|c| serde_json::from_str(c))
            .transpose()
            .map_err(|e| corrupt(format!("config: {e}")))?
            .ok_or_else(|| corrupt("missing config".into()))?;
        let mut extra = BTreeMap::new();
        for (k, v) in &meta {
            if let Some(key) = k.strip_prefix(EXTRA_PREFIX) {
                extra.insert(
                    key.to_string(),
                    serde_json::from_str(v).map_err(|e| corrupt(format!("{k}: {e}")))?,
                );
            }
        }
        let mut tensors = BTreeMap::new();
        for (name, view) in st.tensors() {
            if view.dtype() != Dtype::F32 {
                return Err(corrupt(format!("tensor `{name}` is {:?}, expected F32", view.dtype())));
            }
            let values: Vec<f32> = view
                .data()
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            let t = Tensor::from_vec(values, view.shape(), &Device::Cpu)?;
            tensors.insert(name, t);
        }
        Ok(Self {
            kind,
            config,
            extra,
            tensors,
        })
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(Error::CorruptCheckpoint(format!(
                "expected a `{kind}` checkpoint, found `{}`",
                self.kind
            )))
        }
    }

    /// Tensors under `prefix.`, keys unchanged.
    pub fn group(&self, prefix: &str) -> BTreeMap<String, Tensor> {
        let p = format!("{prefix}.");
        self.tensors
            .iter()
            .filter(|(k, _)| k.starts_with(&p))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.safetensors");
        let mut tensors = BTreeMap::new();
        tensors.insert(
            "a.w".to_string(),
            Tensor::new(&[[1.5f32, -0.0], [f32::MIN_POSITIVE, 3.0]], &Device::Cpu).unwrap(),
        );
        tensors.insert("b".to_string(), Tensor::new(&[7f32], &Device::Cpu).unwrap());
        let ck = Checkpoint::new("toy", json!({"width": 2}), tensors).with_extra("vocab", json!(["yes", "no"]));
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.kind, "toy");
        assert_eq!(back.config, json!({"width": 2}));
        assert_eq!(back.extra["vocab"], json!(["yes", "no"]));
        for (k, v) in &ck.tensors {
            let a: Vec<u32> = v
                .flatten_all()
                .unwrap()
                .to_vec1::<f32>()
                .unwrap()
                .iter()
                .map(|x| x.to_bits())
                .collect();
            let b: Vec<u32> = back.tensors[k]
                .flatten_all()
                .unwrap()
                .to_vec1::<f32>()
                .unwrap()
                .iter()
                .map(|x| x.to_bits())
                .collect();
            assert_eq!(a, b);
            assert_eq!(v.dims(), back.tensors[k].dims());
        }
        assert_eq!(back.group("a").len(), 1);
    }

    #[test]
    fn missing_and_garbage_files() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            Checkpoint::load(&dir.path().join("none")),
            Err(Error::WeightsMissing(_))
        ));
        let path = dir.path().join("junk");
        fs::write(&path, b"definitely not safetensors").unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::CorruptCheckpoint(_))));
    }
}
