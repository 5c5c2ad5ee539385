//! Named parameter storage and checkpoint files.

use std::collections::{BTreeMap, HashMap};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::Rng;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamId(pub usize);

/// Trainable tensors in insertion order, addressable by stable name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "parameter {name} registered twice");
        let id = ParamId(self.values.len());
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        id
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn sum_squares(&self) -> f64 {
        self.values.iter().map(Tensor::sum_squares).sum()
    }

    /// Records every parameter on `tape` as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound(self.values.iter().map(|v| tape.param(v.clone())).collect())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            meta: BTreeMap::new(),
            params: self
                .iter()
                .map(|(_, name, t)| CheckpointEntry {
                    name: name.to_string(),
                    shape: [t.rows(), t.cols()],
                    values: t.data().to_vec(),
                })
                .collect(),
        }
    }

    /// Overwrites every parameter from `ckpt`. Names and shapes must match
    /// exactly.
    pub fn load_values(&mut self, ckpt: &Checkpoint) -> Result<()> {
        if ckpt.params.len() != self.len() {
            return Err(Error::Contract(format!(
                "checkpoint has {} parameters, model has {}",
                ckpt.params.len(),
                self.len()
            )));
        }
        for entry in &ckpt.params {
            let id = self
                .id(&entry.name)
                .ok_or_else(|| Error::Reference(format!("checkpoint parameter {} is not part of the model", entry.name)))?;
            let t = Tensor::new(entry.shape[0], entry.shape[1], entry.values.clone())?;
            if t.shape() != self.get(id).shape() {
                return Err(Error::Shape {
                    op: "load_checkpoint",
                    shapes: format!("{}: {:?} vs {:?}", entry.name, t.shape(), self.get(id).shape()),
                });
            }
            self.values[id.0] = t;
        }
        Ok(())
    }
}

/// Tape handles for every parameter of a store, indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Bound(Vec<Var>);

impl Bound {
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Bound(vars)
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.0[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

/// Uniform on `+-sqrt(6 / (fan_in + fan_out))` for an `out x in` matrix.
pub fn glorot(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    uniform(rows, cols, bound, rng)
}

pub fn uniform(rows: usize, cols: usize, bound: f64, rng: &mut Rng) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(rows, cols, data).expect("sized")
}

pub const CHECKPOINT_FORMAT: &str = "tgnn-checkpoint-v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: [usize; 2],
    pub values: Vec<f64>,
}

/// Parameter name to shape and row-major values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    /// Free-form model settings that are not tensors.
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
    pub params: Vec<CheckpointEntry>,
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(text)?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::Contract(format!("unsupported checkpoint format {:?}", ckpt.format)));
        }
        Ok(ckpt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::Seed;

    #[test]
    fn glorot_respects_bound() {
        let mut rng = Seed(1).rng();
        let t = glorot(2, 3, &mut rng);
        let b = (6.0f64 / 5.0).sqrt();
        assert!(t.data().iter().all(|v| v.abs() <= b));
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let mut rng = Seed(3).rng();
        let mut store = ParamStore::new();
        store.add("gru.A_z", glorot(2, 3, &mut rng));
        store.add("attn.A", uniform(1, 4, 0.1, &mut rng));
        let json = store.to_checkpoint().to_json();
        let mut other = ParamStore::new();
        other.add("gru.A_z", Tensor::zeros(2, 3));
        other.add("attn.A", Tensor::zeros(1, 4));
        other.load_values(&Checkpoint::from_json(&json).unwrap()).unwrap();
        assert_eq!(store, other);
        assert_eq!(other.to_checkpoint().to_json(), json);
    }

    #[test]
    fn checkpoint_shape_mismatch_is_rejected() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::zeros(2, 2));
        let mut ckpt = store.to_checkpoint();
        ckpt.params[0].shape = [1, 4];
        assert!(matches!(store.load_values(&ckpt), Err(Error::Shape { .. })));
        ckpt.params[0].name = "other".into();
        assert!(matches!(store.load_values(&ckpt), Err(Error::Reference(_))));
    }
}
