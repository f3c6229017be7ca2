use std::collections::BTreeMap;

use super::{AutodiffError, ParameterStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
    Adamax,
}

impl OptimizerKind {
    pub fn from_name(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Some(Self::Sgd),
            "adam" => Some(Self::Adam),
            "adamax" => Some(Self::Adamax),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Per-parameter learning-rate factors. A key matches a parameter name
    /// exactly or a network name (covering all of its layers).
    pub lr_multipliers: BTreeMap<String, f64>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Optimizer { kind, lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, lr_multipliers: BTreeMap::new() }
    }

    fn multiplier(&self, name: &str) -> f64 {
        if let Some(&m) = self.lr_multipliers.get(name) {
            return m;
        }
        let owner = name.split_once('.').map_or(name, |(net, _)| net);
        self.lr_multipliers.get(owner).copied().unwrap_or(1.0)
    }

    /// One update from raw-space gradients. Parameters without an entry in
    /// `grads` are left untouched (their moments too).
    pub fn step(&self, store: &mut ParameterStore, grads: &BTreeMap<String, Vec<f64>>) -> Result<(), AutodiffError> {
        for (name, g) in grads {
            let len = store.raw(name).ok_or_else(|| AutodiffError::UnknownParam(name.clone()))?.values.len();
            if len != g.len() {
                return Err(AutodiffError::ShapeMismatch(format!("gradient for `{name}` has {} values", g.len())));
            }
        }
        let t = store.bump_version() as i32;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (name, g) in grads {
            let lr = self.lr * self.multiplier(name);
            let (theta, m, v) = store.slots_mut(name)?;
            for i in 0..g.len() {
                match self.kind {
                    OptimizerKind::Sgd => theta[i] -= lr * g[i],
                    OptimizerKind::Adam => {
                        m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                        let mhat = m[i] / (1.0 - b1.powi(t));
                        let vhat = v[i] / (1.0 - b2.powi(t));
                        theta[i] -= lr * mhat / (vhat.sqrt() + eps);
                    }
                    OptimizerKind::Adamax => {
                        m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                        v[i] = (b2 * v[i]).max(g[i].abs());
                        theta[i] -= lr / (1.0 - b1.powi(t)) * m[i] / (v[i] + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
