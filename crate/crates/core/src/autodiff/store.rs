use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{inverse_softplus, logit, AutodiffError, Scalar};
use crate::syntax::Constraint;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self, AutodiffError> {
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(AutodiffError::ShapeMismatch(format!(
                "shape {shape:?} holds {n} values, got {}",
                values.len()
            )));
        }
        Ok(Tensor { shape, values })
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { shape: vec![], values: vec![v] }
    }

    pub fn vector(values: Vec<f64>) -> Self {
        Tensor { shape: vec![values.len()], values }
    }
}

/// Raw parameter values keyed by name, written as a JSON object
/// `{"name": {"shape": [...], "values": [...]}}`.
pub type Checkpoint = BTreeMap<String, Tensor>;

#[derive(Debug, Clone)]
struct Entry {
    raw: Tensor,
    constraint: Constraint,
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Named learnable tensors. Values are stored unconstrained; positive and
/// unit parameters are mapped through softplus and sigmoid on read.
/// Optimizer moments live next to each tensor and `version` counts steps.
#[derive(Debug, Clone, Default)]
pub struct ParameterStore {
    entries: BTreeMap<String, Entry>,
    version: u64,
}

impl Constraint {
    pub fn apply<S: Scalar>(self, raw: S) -> S {
        match self {
            Constraint::Real => raw,
            Constraint::Positive => raw.softplus(),
            Constraint::Unit => raw.sigmoid(),
        }
    }

    pub fn invert(self, value: f64) -> f64 {
        match self {
            Constraint::Real => value,
            Constraint::Positive => inverse_softplus(value),
            Constraint::Unit => logit(value),
        }
    }
}

/// Raw values, first moments and second moments of one parameter.
pub(super) type Slots<'a> = (&'a mut [f64], &'a mut [f64], &'a mut [f64]);

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a tensor given in raw (unconstrained) space.
    pub fn insert_raw(&mut self, name: &str, raw: Tensor, constraint: Constraint) -> Result<(), AutodiffError> {
        if self.entries.contains_key(name) {
            return Err(AutodiffError::DuplicateParam(name.to_string()));
        }
        let n = raw.values.len();
        self.entries.insert(name.to_string(), Entry { raw, constraint, m: vec![0.0; n], v: vec![0.0; n] });
        Ok(())
    }

    /// Adds a tensor given in constrained space.
    pub fn insert(&mut self, name: &str, value: Tensor, constraint: Constraint) -> Result<(), AutodiffError> {
        let values = value.values.iter().map(|&x| constraint.invert(x)).collect();
        self.insert_raw(name, Tensor { shape: value.shape, values }, constraint)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn raw(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name).map(|e| &e.raw)
    }

    pub fn constraint(&self, name: &str) -> Option<Constraint> {
        self.entries.get(name).map(|e| e.constraint)
    }

    /// Values in constrained space.
    pub fn value(&self, name: &str) -> Option<Vec<f64>> {
        let e = self.entries.get(name)?;
        Some(e.raw.values.iter().map(|&x| e.constraint.apply(x)).collect())
    }

    pub fn set_raw(&mut self, name: &str, values: &[f64]) -> Result<(), AutodiffError> {
        let e = self.entry_mut(name)?;
        if e.raw.values.len() != values.len() {
            return Err(AutodiffError::ShapeMismatch(format!(
                "`{name}` holds {} values, got {}",
                e.raw.values.len(),
                values.len()
            )));
        }
        e.raw.values.copy_from_slice(values);
        Ok(())
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    fn entry_mut(&mut self, name: &str) -> Result<&mut Entry, AutodiffError> {
        self.entries.get_mut(name).ok_or_else(|| AutodiffError::UnknownParam(name.to_string()))
    }

    /// Raw values plus both moment buffers, for one optimizer update.
    pub(super) fn slots_mut(&mut self, name: &str) -> Result<Slots<'_>, AutodiffError> {
        let e = self.entry_mut(name)?;
        Ok((&mut e.raw.values, &mut e.m, &mut e.v))
    }

    pub(super) fn bump_version(&mut self) -> u64 {
        self.version += 1;
        self.version
    }

    pub fn checkpoint(&self) -> Checkpoint {
        self.entries.iter().map(|(k, e)| (k.clone(), e.raw.clone())).collect()
    }

    /// Overwrites raw values from a checkpoint. Every entry must name an
    /// existing parameter with the same shape.
    pub fn restore(&mut self, ckpt: &Checkpoint) -> Result<(), AutodiffError> {
        for (name, t) in ckpt {
            let e = self.entry_mut(name)?;
            if e.raw.shape != t.shape || e.raw.values.len() != t.values.len() {
                return Err(AutodiffError::ShapeMismatch(format!(
                    "`{name}`: stored {:?}, checkpoint {:?}",
                    e.raw.shape, t.shape
                )));
            }
        }
        for (name, t) in ckpt {
            self.set_raw(name, &t.values)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), AutodiffError> {
        let text =
            serde_json::to_string_pretty(&self.checkpoint()).map_err(|e| AutodiffError::Checkpoint(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| AutodiffError::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(&mut self, path: &Path) -> Result<(), AutodiffError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| AutodiffError::Checkpoint(format!("{}: {e}", path.display())))?;
        let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| AutodiffError::Checkpoint(e.to_string()))?;
        self.restore(&ckpt)
    }
}
