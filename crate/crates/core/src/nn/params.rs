//! Named, seeded parameter storage.
//!
//! Every tensor a model owns lives here under a dotted name. Initialization
//! draws from a ChaCha stream keyed by the store seed, in construction order,
//! so building the same architecture with the same seed yields bitwise
//! identical weights.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Mutex;

use candle_core::{DType, Device, Shape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Const(f64),
    Normal { std: f64 },
    Uniform { bound: f64 },
}

impl Init {
    /// PyTorch-style fan-in bound for linear and convolution weights.
    pub fn fan_in(fan_in: usize) -> Self {
        Init::Uniform {
            bound: 1.0 / (fan_in.max(1) as f64).sqrt(),
        }
    }
}

struct Inner {
    rng: ChaCha8Rng,
    vars: BTreeMap<String, Var>,
    buffers: BTreeSet<String>,
}

pub struct ParamStore {
    inner: Mutex<Inner>,
    device: Device,
}

impl std::fmt::Debug for ParamStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let inner = self.inner.lock().unwrap();
        f.debug_struct("ParamStore")
            .field("tensors", &inner.vars.len())
            .field("buffers", &inner.buffers.len())
            .finish()
    }
}

impl ParamStore {
    pub fn new(seed: u64, device: &Device) -> Self {
        Self {
            inner: Mutex::new(Inner {
                rng: ChaCha8Rng::seed_from_u64(seed),
                vars: BTreeMap::new(),
                buffers: BTreeSet::new(),
            }),
            device: device.clone(),
        }
    }

    pub fn root(&self) -> Scope<'_> {
        Scope {
            store: self,
            prefix: String::new(),
        }
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    fn create(&self, name: String, shape: Shape, init: Init, buffer: bool) -> Result<Var> {
        let mut inner = self.inner.lock().unwrap();
        if inner.vars.contains_key(&name) {
            return Err(Error::ConfigInvalid(format!("parameter `{name}` registered twice")));
        }
        let n = shape.elem_count();
        let values: Vec<f32> = match init {
            Init::Const(c) => vec![c as f32; n],
            Init::Normal { std } => {
                let dist = Normal::new(0.0, std).map_err(|e| Error::ConfigInvalid(e.to_string()))?;
                (0..n).map(|_| dist.sample(&mut inner.rng) as f32).collect()
            }
            Init::Uniform { bound } => {
                let dist = Uniform::new_inclusive(-bound, bound).map_err(|e| Error::ConfigInvalid(e.to_string()))?;
                (0..n).map(|_| dist.sample(&mut inner.rng) as f32).collect()
            }
        };
        let var = Var::from_tensor(&Tensor::from_vec(values, shape, &self.device)?)?;
        inner.vars.insert(name.clone(), var.clone());
        if buffer {
            inner.buffers.insert(name);
        }
        Ok(var)
    }

    /// Variables the optimizer should update, in name order.
    pub fn trainable_vars(&self) -> Vec<Var> {
        let inner = self.inner.lock().unwrap();
        inner
            .vars
            .iter()
            .filter(|(name, _)| !inner.buffers.contains(*name))
            .map(|(_, v)| v.clone())
            .collect()
    }

    /// Trainable variables under `prefix` only.
    pub fn trainable_vars_with_prefix(&self, prefix: &str) -> Vec<Var> {
        let inner = self.inner.lock().unwrap();
        inner
            .vars
            .iter()
            .filter(|(name, _)| name.starts_with(prefix) && !inner.buffers.contains(*name))
            .map(|(_, v)| v.clone())
            .collect()
    }

    pub fn names(&self) -> Vec<String> {
        self.inner.lock().unwrap().vars.keys().cloned().collect()
    }

    pub fn get(&self, name: &str) -> Option<Var> {
        self.inner.lock().unwrap().vars.get(name).cloned()
    }

    /// Snapshot of every tensor (parameters and buffers), detached from the graph.
    pub fn snapshot(&self) -> Result<BTreeMap<String, Tensor>> {
        let inner = self.inner.lock().unwrap();
        inner
            .vars
            .iter()
            .map(|(k, v)| Ok((k.clone(), v.as_tensor().detach().copy()?)))
            .collect()
    }

    /// Overwrite every tensor under `prefix` from `tensors` (whose keys carry the
    /// same prefix). The two name sets must match exactly, as must every shape.
    pub fn load_prefix(&self, prefix: &str, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
        let inner = self.inner.lock().unwrap();
        let ours: BTreeSet<&String> = inner.vars.keys().filter(|k| k.starts_with(prefix)).collect();
        let theirs: BTreeSet<&String> = tensors.keys().filter(|k| k.starts_with(prefix)).collect();
        if let Some(missing) = ours.difference(&theirs).next() {
            return Err(Error::CorruptCheckpoint(format!("missing tensor `{missing}`")));
        }
        if let Some(extra) = theirs.difference(&ours).next() {
            return Err(Error::CorruptCheckpoint(format!("unexpected tensor `{extra}`")));
        }
        for name in ours {
            let var = &inner.vars[name];
            let src = &tensors[name];
            if var.shape() != src.shape() {
                return Err(Error::CorruptCheckpoint(format!(
                    "tensor `{name}` has shape {:?}, model expects {:?}",
                    src.dims(),
                    var.dims()
                )));
            }
            var.set(&src.to_dtype(DType::F32)?.to_device(&self.device)?)?;
        }
        Ok(())
    }

    pub fn load_all(&self, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
        self.load_prefix("", tensors)
    }
}

#[derive(Clone)]
pub struct Scope<'a> {
    store: &'a ParamStore,
    prefix: String,
}

impl<'a> Scope<'a> {
    pub fn pp(&self, name: impl std::fmt::Display) -> Scope<'a> {
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        };
        Scope {
            store: self.store,
            prefix,
        }
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        }
    }

    pub fn param<S: Into<Shape>>(&self, name: &str, shape: S, init: Init) -> Result<Tensor> {
        let var = self.store.create(self.full_name(name), shape.into(), init, false)?;
        Ok(var.as_tensor().clone())
    }

    /// A tensor that is checkpointed but never handed to the optimizer.
    pub fn buffer<S: Into<Shape>>(&self, name: &str, shape: S, init: Init) -> Result<Var> {
        self.store.create(self.full_name(name), shape.into(), init, true)
    }

    pub fn device(&self) -> &Device {
        self.store.device()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_weights() {
        let build = |seed| {
            let store = ParamStore::new(seed, &Device::Cpu);
            let root = store.root();
            root.pp("a").param("w", (3, 4), Init::Normal { std: 1.0 }).unwrap();
            root.pp("b").param("w", 5, Init::fan_in(4)).unwrap();
            store.snapshot().unwrap()
        };
        let x = build(1);
        let y = build(1);
        let z = build(2);
        for (k, v) in &x {
            let a = v.flatten_all().unwrap().to_vec1::<f32>().unwrap();
            let b = y[k].flatten_all().unwrap().to_vec1::<f32>().unwrap();
            let c = z[k].flatten_all().unwrap().to_vec1::<f32>().unwrap();
            assert_eq!(a, b);
            assert_ne!(a, c);
        }
    }

    #[test]
    fn buffers_are_not_trainable() {
        let store = ParamStore::new(0, &Device::Cpu);
        let root = store.root();
        root.param("w", 2, Init::Const(1.0)).unwrap();
        root.buffer("running", 2, Init::Const(0.0)).unwrap();
        assert_eq!(store.trainable_vars().len(), 1);
        assert_eq!(store.names(), vec!["running".to_string(), "w".to_string()]);
    }

    #[test]
    fn load_rejects_shape_and_name_mismatch() {
        let store = ParamStore::new(0, &Device::Cpu);
        store.root().pp("m").param("w", (2, 2), Init::Const(0.0)).unwrap();
        let mut bad = BTreeMap::new();
        bad.insert(
            "m.w".to_string(),
            Tensor::zeros((3, 2), DType::F32, &Device::Cpu).unwrap(),
        );
        assert!(matches!(store.load_all(&bad), Err(Error::CorruptCheckpoint(_))));
        let mut other = BTreeMap::new();
        other.insert(
            "m.v".to_string(),
            Tensor::zeros((2, 2), DType::F32, &Device::Cpu).unwrap(),
        );
        assert!(matches!(store.load_all(&other), Err(Error::CorruptCheckpoint(_))));
    }
}
