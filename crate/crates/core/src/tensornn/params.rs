//! Named parameter storage with lazy creation, Adam state, and JSON
//! checkpointing.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Gradients, Tensor, TensorError};

/// Initialization rule for a fresh parameter.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    /// Uniform on [-l, l] with l = sqrt(6 / (fan_in + fan_out)).
    Glorot {
        fan_in: usize,
        fan_out: usize,
    },
    Zeros,
    Constant(f64),
}

#[derive(Debug, Clone)]
struct Entry {
    name: String,
    value: Tensor,
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Named map of parameter tensors plus per-parameter optimizer state.
/// Initialization is derived from (seed, name) so values do not depend on
/// creation order; shapes are immutable once created.
#[derive(Debug, Clone)]
pub struct ParamStore {
    seed: u64,
    entries: Vec<Entry>,
    index: HashMap<String, usize>,
    adam_t: u64,
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        ParamStore {
            seed,
            entries: Vec::new(),
            index: HashMap::new(),
            adam_t: 0,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar coordinates across all parameters.
    pub fn coord_count(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.entries[i].value)
    }

    /// Fetches a parameter, creating it with the given shape and
    /// initialization on first use. Requesting an existing name with a
    /// different shape is an error.
    pub fn get_or_init(
        &mut self,
        name: &str,
        shape: &[usize],
        init: Init,
    ) -> Result<&Tensor, TensorError> {
        if let Some(&i) = self.index.get(name) {
            let existing = &self.entries[i].value;
            if existing.shape() != shape {
                return Err(TensorError::ParamShape {
                    name: name.to_string(),
                    existing: existing.shape().to_vec(),
                    requested: shape.to_vec(),
                });
            }
            return Ok(existing);
        }
        let n: usize = shape.iter().product();
        let data = match init {
            Init::Zeros => vec![0.0; n],
            Init::Constant(c) => vec![c; n],
            Init::Glorot { fan_in, fan_out } => {
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed.rotate_left(17) ^ fnv1a(name));
                (0..n).map(|_| rng.gen_range(-limit..limit)).collect()
            }
        };
        let value = Tensor::from_vec(shape.to_vec(), data)?;
        let idx = self.entries.len();
        self.entries.push(Entry {
            name: name.to_string(),
            value,
            m: vec![0.0; n],
            v: vec![0.0; n],
        });
        self.index.insert(name.to_string(), idx);
        Ok(&self.entries[idx].value)
    }

    /// Overwrites a parameter's values (testing and checkpoint loading).
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<(), TensorError> {
        match self.index.get(name) {
            Some(&i) => {
                if self.entries[i].value.shape() != value.shape() {
                    return Err(TensorError::ParamShape {
                        name: name.to_string(),
                        existing: self.entries[i].value.shape().to_vec(),
                        requested: value.shape().to_vec(),
                    });
                }
                self.entries[i].value = value;
                Ok(())
            }
            None => {
                let n = value.len();
                let idx = self.entries.len();
                self.entries.push(Entry {
                    name: name.to_string(),
                    value,
                    m: vec![0.0; n],
                    v: vec![0.0; n],
                });
                self.index.insert(name.to_string(), idx);
                Ok(())
            }
        }
    }

    pub fn set_coord(&mut self, name: &str, coord: usize, x: f64) -> Result<(), TensorError> {
        let &i = self
            .index
            .get(name)
            .ok_or_else(|| TensorError::UnknownParam(name.to_string()))?;
        self.entries[i].value.data_mut()[coord] = x;
        Ok(())
    }

    pub fn get_coord(&self, name: &str, coord: usize) -> Result<f64, TensorError> {
        let &i = self
            .index
            .get(name)
            .ok_or_else(|| TensorError::UnknownParam(name.to_string()))?;
        Ok(self.entries[i].value.data()[coord])
    }

    /// One Adam update with bias correction. Parameters without a gradient
    /// entry are treated as zero-gradient and stay put (their moment decay
    /// is still a no-op at zero).
    pub fn adam_step(&mut self, grads: &Gradients, lr: f64, beta1: f64, beta2: f64, eps: f64) {
        self.adam_t += 1;
        let t = self.adam_t as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for e in &mut self.entries {
            let Some(g) = grads.get(&e.name) else {
                continue;
            };
            let gd = g.data();
            let vd = e.value.data_mut();
            for i in 0..gd.len() {
                e.m[i] = beta1 * e.m[i] + (1.0 - beta1) * gd[i];
                e.v[i] = beta2 * e.v[i] + (1.0 - beta2) * gd[i] * gd[i];
                let mhat = e.m[i] / bc1;
                let vhat = e.v[i] / bc2;
                vd[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }

    /// Serializes to the checkpoint JSON: `{"meta": ..., "params":
    /// {name: [shape, values]}}`. Names are emitted sorted so the output is
    /// byte-stable.
    pub fn to_checkpoint(&self, meta: serde_json::Value) -> String {
        let params: BTreeMap<&str, (Vec<usize>, &[f64])> = self
            .entries
            .iter()
            .map(|e| (e.name.as_str(), (e.value.shape().to_vec(), e.value.data())))
            .collect();
        let doc = CheckpointDoc { meta, params };
        serde_json::to_string_pretty(&doc).expect("checkpoint serialization")
    }

    /// Loads a checkpoint; returns the store plus the caller's metadata.
    pub fn from_checkpoint(s: &str) -> Result<(Self, serde_json::Value), TensorError> {
        let doc: CheckpointLoad =
            serde_json::from_str(s).map_err(|_| TensorError::NonFinite("checkpoint parse"))?;
        let seed = doc.meta.get("seed").and_then(|v| v.as_u64()).unwrap_or(0);
        let mut store = ParamStore::new(seed);
        for (name, (shape, data)) in doc.params {
            store.set(&name, Tensor::from_vec(shape, data)?)?;
        }
        Ok((store, doc.meta))
    }
}

#[derive(Serialize)]
struct CheckpointDoc<'a> {
    meta: serde_json::Value,
    params: BTreeMap<&'a str, (Vec<usize>, &'a [f64])>,
}

#[derive(Deserialize)]
struct CheckpointLoad {
    meta: serde_json::Value,
    params: BTreeMap<String, (Vec<usize>, Vec<f64>)>,
}
