use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "nelp-params";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
struct Entry {
    name: String,
    tensor: Tensor,
    frozen: bool,
    // row 0 is a padding row: kept at zero and never updated
    pad_row: bool,
}

/// Named trainable tensors in a fixed insertion order.
#[derive(Clone, Debug, Default)]
pub struct ParamSet {
    entries: Vec<Entry>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointRecord {
    name: String,
    shape: Vec<usize>,
    #[serde(default)]
    pad_row: bool,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    params: Vec<CheckpointRecord>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.push(name.into(), tensor, false)
    }

    /// Adds an embedding table whose row 0 is padding.
    pub fn add_embedding(&mut self, name: impl Into<String>, mut tensor: Tensor) -> ParamId {
        let cols = tensor.cols();
        tensor.data_mut()[..cols].iter_mut().for_each(|x| *x = 0.0);
        self.push(name.into(), tensor, true)
    }

    fn push(&mut self, name: String, tensor: Tensor, pad_row: bool) -> ParamId {
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        let id = self.entries.len();
        self.index.insert(name.clone(), id);
        self.entries.push(Entry {
            name,
            tensor,
            frozen: false,
            pad_row,
        });
        ParamId(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].tensor
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn is_frozen(&self, id: ParamId) -> bool {
        self.entries[id.0].frozen
    }

    pub fn set_frozen(&mut self, id: ParamId, frozen: bool) {
        self.entries[id.0].frozen = frozen;
    }

    pub fn has_pad_row(&self, id: ParamId) -> bool {
        self.entries[id.0].pad_row
    }

    pub fn num_values(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for e in &mut self.entries {
            e.tensor.zero_grad();
        }
    }

    /// Euclidean norm over all gradients of non-frozen parameters.
    pub fn grad_norm(&self) -> f64 {
        self.entries
            .iter()
            .filter(|e| !e.frozen)
            .filter_map(|e| e.tensor.grad())
            .flat_map(|g| g.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Keeps padding rows at zero.
    pub(crate) fn enforce_pad_rows(&mut self) {
        for e in self.entries.iter_mut().filter(|e| e.pad_row) {
            let cols = e.tensor.cols();
            e.tensor.data_mut()[..cols].iter_mut().for_each(|x| *x = 0.0);
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let ck = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            params: self
                .entries
                .iter()
                .map(|e| CheckpointRecord {
                    name: e.name.clone(),
                    shape: e.tensor.shape().to_vec(),
                    pad_row: e.pad_row,
                    values: e.tensor.data().to_vec(),
                })
                .collect(),
        };
        Ok(serde_json::to_string(&ck)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Format(format!("not a parameter checkpoint: {}", ck.format)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {}", ck.version)));
        }
        let mut set = ParamSet::new();
        for rec in ck.params {
            if set.index.contains_key(&rec.name) {
                return Err(Error::Format(format!("duplicate parameter {}", rec.name)));
            }
            let t = Tensor::new(rec.shape, rec.values)?;
            set.push(rec.name, t, rec.pad_row);
        }
        Ok(set)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Copies values from `other`, which must have the same names and shapes in the same order.
    pub fn copy_values_from(&mut self, other: &ParamSet) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::Format(format!(
                "expected {} parameters, checkpoint has {}",
                self.entries.len(),
                other.entries.len()
            )));
        }
        for (a, b) in self.entries.iter().zip(&other.entries) {
            if a.name != b.name || a.tensor.shape() != b.tensor.shape() {
                return Err(Error::Format(format!(
                    "parameter mismatch: {} {:?} vs {} {:?}",
                    a.name,
                    a.tensor.shape(),
                    b.name,
                    b.tensor.shape()
                )));
            }
        }
        for (a, b) in self.entries.iter_mut().zip(&other.entries) {
            a.tensor.data_mut().copy_from_slice(b.tensor.data());
        }
        Ok(())
    }
}
