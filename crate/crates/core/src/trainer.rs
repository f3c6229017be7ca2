//! Fitting parameters to target query probabilities.
//!
//! A dataset is JSON lines of `{"query": "q(X)", "bindings": {"X": "a"}, "target": 0.8}`.
//! Binding values are terms written as strings, numbers, or arrays of numbers;
//! an array becomes a data vector private to its example.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::Value;
use thiserror::Error;

use crate::autodiff::{Optimizer, OptimizerKind, ParameterStore};
use crate::ground::{GroundOptions, DEFAULT_DEPTH_LIMIT};
use crate::model::EngineError;
use crate::relax::{grad_query, ParamGrads, Schedule};
use crate::syntax::{parse_term, Atom, DataBinding, DataSource, ProgramAst, Term};
use crate::wmi::{Context, Coolness, InferenceConfig, Mode, Plan};

/// Probabilities are kept this far from 0 and 1 inside the log loss.
pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("example {index}: {message}")]
    Dataset { index: usize, message: String },
    #[error("example {index}: {source}")]
    Example { index: usize, source: EngineError },
    #[error("optimizer step: {0}")]
    Step(String),
}

impl TrainError {
    /// Index of the offending example, when there is one.
    pub fn example_index(&self) -> Option<usize> {
        match self {
            TrainError::Dataset { index, .. } | TrainError::Example { index, .. } => Some(*index),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Bce,
    Mse,
}

impl LossKind {
    pub fn from_name(s: &str) -> Option<LossKind> {
        match s {
            "bce" => Some(LossKind::Bce),
            "mse" => Some(LossKind::Mse),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Bce => "bce",
            LossKind::Mse => "mse",
        }
    }
}

/// Loss of predicting `p` for target `y`, and its derivative in `p`.
pub fn loss(p: f64, y: f64, kind: LossKind) -> (f64, f64) {
    match kind {
        LossKind::Bce => {
            let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
            (-y * p.ln() - (1.0 - y) * (1.0 - p).ln(), -y / p + (1.0 - y) / (1.0 - p))
        }
        LossKind::Mse => ((p - y) * (p - y), 2.0 * (p - y)),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    /// Ground query after substituting the bindings.
    pub query: Atom,
    pub target: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub examples: Vec<Example>,
    /// Vectors bound inline by examples, keyed by their generated names.
    pub data: BTreeMap<String, Vec<f64>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Parses JSON lines. Blank lines are skipped; example indices count
    /// only non-blank lines.
    pub fn from_jsonl(text: &str) -> Result<Dataset, TrainError> {
        let mut ds = Dataset::default();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let index = ds.examples.len();
            let err = |message: String| TrainError::Dataset { index, message };
            let v: Value = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
            let query = v.get("query").and_then(Value::as_str).ok_or_else(|| err("missing `query` string".into()))?;
            let target =
                v.get("target").and_then(Value::as_f64).ok_or_else(|| err("missing numeric `target`".into()))?;
            let mut bindings = BTreeMap::new();
            if let Some(b) = v.get("bindings") {
                let b = b.as_object().ok_or_else(|| err("`bindings` must be an object".into()))?;
                for (var, val) in b {
                    let term = ds.binding(index, var, val).map_err(err)?;
                    bindings.insert(var.clone(), term);
                }
            }
            let example = Example::new(query, &bindings, target).map_err(err)?;
            ds.examples.push(example);
        }
        Ok(ds)
    }

    fn binding(&mut self, index: usize, var: &str, val: &Value) -> Result<Term, String> {
        match val {
            Value::Number(n) => Ok(Term::Num(n.as_f64().ok_or("binding is not a finite number")?)),
            Value::String(s) => {
                let t = parse_term(s).map_err(|e| format!("binding `{var}`: {e}"))?;
                if !t.is_ground() {
                    return Err(format!("binding `{var}` = `{s}` is not ground"));
                }
                Ok(t)
            }
            Value::Array(items) => {
                let values = items
                    .iter()
                    .map(|x| x.as_f64().ok_or_else(|| format!("binding `{var}` must hold only numbers")))
                    .collect::<Result<Vec<_>, _>>()?;
                // A leading underscore cannot be written as a constant in a
                // program, so these never shadow program data.
                let name = format!("_{index}_{var}");
                self.data.insert(name.clone(), values);
                Ok(Term::Sym(name))
            }
            _ => Err(format!("binding `{var}` must be a string, number or array")),
        }
    }
}

impl Example {
    /// Instantiates `query` with `bindings`; the result must be ground and
    /// the target a probability.
    pub fn new(query: &str, bindings: &BTreeMap<String, Term>, target: f64) -> Result<Example, String> {
        if !(0.0..=1.0).contains(&target) {
            return Err(format!("target {target} is not in [0, 1]"));
        }
        let t = parse_term(query).map_err(|e| format!("query `{query}`: {e}"))?;
        let atom = Atom::from_term(&substitute(&t, bindings)).ok_or_else(|| format!("`{query}` is not an atom"))?;
        if !atom.is_ground() {
            return Err(format!("query `{atom}` is not ground under the bindings"));
        }
        Ok(Example { query: atom, target })
    }
}

fn substitute(t: &Term, b: &BTreeMap<String, Term>) -> Term {
    match t {
        Term::Var(v) => b.get(v).cloned().unwrap_or_else(|| t.clone()),
        Term::Compound(f, args) => Term::Compound(f.clone(), args.iter().map(|a| substitute(a, b)).collect()),
        Term::Func(f, args) => Term::Func(f.clone(), args.iter().map(|a| substitute(a, b)).collect()),
        Term::List(args) => Term::List(args.iter().map(|a| substitute(a, b)).collect()),
        _ => t.clone(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    /// Stop after this many optimizer steps, even mid-epoch.
    pub max_steps: Option<usize>,
    pub n_samples: usize,
    pub seed: u64,
    pub schedule: Schedule,
    pub mode: Mode,
    pub lr_multipliers: BTreeMap<String, f64>,
    pub shuffle: bool,
    pub depth_limit: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossKind::Bce,
            optimizer: OptimizerKind::Adamax,
            lr: 1e-3,
            batch: 10,
            epochs: 1,
            max_steps: None,
            n_samples: 1000,
            seed: 0,
            schedule: Schedule::Constant { beta0: 50.0 },
            mode: Mode::Soft,
            lr_multipliers: BTreeMap::new(),
            shuffle: true,
            depth_limit: DEFAULT_DEPTH_LIMIT,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.lr));
        }
        if self.batch == 0 {
            return bad("batch size must be at least 1".into());
        }
        if self.n_samples == 0 {
            return bad("n_samples must be at least 1".into());
        }
        if let Some((name, m)) = self.lr_multipliers.iter().find(|(_, m)| !(**m > 0.0 && m.is_finite())) {
            return bad(format!("learning-rate multiplier for `{name}` must be positive, got {m}"));
        }
        self.schedule.validate().map_err(TrainError::Config)
    }

    /// Inference settings for example `index` at optimizer step `step`.
    pub fn inference(&self, epoch: usize, step: usize, index: usize) -> InferenceConfig {
        InferenceConfig {
            n_samples: self.n_samples,
            seed: step_seed(self.seed, step, index),
            mode: self.mode,
            coolness: Coolness::global(self.schedule.anneal(epoch)),
        }
    }
}

/// Seed of the sampler for one example at one step.
pub fn step_seed(seed: u64, step: usize, index: usize) -> u64 {
    mix(mix(seed ^ mix(step as u64)) ^ index as u64)
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    pub epochs: usize,
    pub steps: usize,
    pub examples: usize,
    /// Mean loss over the examples seen in each epoch, measured before
    /// each example's update.
    pub epoch_losses: Vec<f64>,
    /// Coolness used in each epoch.
    pub betas: Vec<f64>,
    pub schedule: String,
    pub loss: LossKind,
    pub optimizer: String,
    pub lr: f64,
    pub batch: usize,
    pub n_samples: usize,
    pub seed: u64,
    /// Final parameter values after constraints.
    pub params: BTreeMap<String, Vec<f64>>,
}

/// Runs minibatch training and updates `store` in place.
///
/// Examples of a batch are evaluated in parallel; their gradients are
/// averaged in example order and applied in one optimizer step.
pub fn train(
    ast: &ProgramAst,
    data: &BTreeMap<String, Vec<f64>>,
    dataset: &Dataset,
    cfg: &TrainConfig,
    store: &mut ParameterStore,
) -> Result<TrainReport, TrainError> {
    cfg.validate()?;
    let mut report = TrainReport {
        epochs: 0,
        steps: 0,
        examples: dataset.len(),
        epoch_losses: Vec::new(),
        betas: Vec::new(),
        schedule: cfg.schedule.to_string(),
        loss: cfg.loss,
        optimizer: format!("{:?}", cfg.optimizer).to_lowercase(),
        lr: cfg.lr,
        batch: cfg.batch,
        n_samples: cfg.n_samples,
        seed: cfg.seed,
        params: BTreeMap::new(),
    };
    if !dataset.is_empty() && cfg.max_steps != Some(0) {
        let (ast, data) = with_example_data(ast, data, dataset);
        let plans = plan_all(&ast, dataset, cfg)?;
        let mut opt = Optimizer::new(cfg.optimizer, cfg.lr);
        opt.lr_multipliers = cfg.lr_multipliers.clone();
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        'epochs: for epoch in 0..cfg.epochs {
            if cfg.shuffle {
                order.sort_unstable();
                order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(cfg.seed ^ mix(epoch as u64 + 1))));
            }
            report.epochs += 1;
            report.betas.push(cfg.schedule.anneal(epoch));
            let (mut total, mut seen) = (0.0, 0usize);
            for batch in order.chunks(cfg.batch) {
                let ctx = Context { store, networks: &ast.networks, data: &data };
                let step = report.steps;
                let results: Vec<(f64, ParamGrads)> = batch
                    .par_iter()
                    .map(|&i| {
                        let ex = &dataset.examples[i];
                        let (r, g) = grad_query(&plans[i], ctx, &cfg.inference(epoch, step, i))
                            .map_err(|e| TrainError::Example { index: i, source: e.into() })?;
                        let (l, dl) = loss(r.estimate, ex.target, cfg.loss);
                        Ok((l, g.into_iter().map(|(k, v)| (k, v.into_iter().map(|x| x * dl).collect())).collect()))
                    })
                    .collect::<Vec<_>>()
                    .into_iter()
                    .collect::<Result<_, TrainError>>()?;
                let mut grads: ParamGrads = BTreeMap::new();
                let scale = 1.0 / batch.len() as f64;
                for (l, g) in results {
                    total += l;
                    seen += 1;
                    for (k, v) in g {
                        let acc = grads.entry(k).or_insert_with(|| vec![0.0; v.len()]);
                        for (a, x) in acc.iter_mut().zip(v) {
                            *a += x * scale;
                        }
                    }
                }
                opt.step(store, &grads).map_err(|e| TrainError::Step(e.to_string()))?;
                report.steps += 1;
                if cfg.max_steps == Some(report.steps) {
                    report.epoch_losses.push(total / seen as f64);
                    break 'epochs;
                }
            }
            report.epoch_losses.push(total / seen as f64);
        }
    }
    report.params = store.names().map(|n| (n.to_string(), store.value(n).expect("listed name"))).collect();
    Ok(report)
}

/// The program and data extended with the dataset's inline vectors.
fn with_example_data(
    ast: &ProgramAst,
    data: &BTreeMap<String, Vec<f64>>,
    dataset: &Dataset,
) -> (ProgramAst, BTreeMap<String, Vec<f64>>) {
    let mut ast = ast.clone();
    let mut data = data.clone();
    for (name, v) in &dataset.data {
        ast.data.push(DataBinding { name: name.clone(), source: DataSource::Inline(v.clone()) });
        data.insert(name.clone(), v.clone());
    }
    (ast, data)
}

/// One plan per example; identical ground queries share a plan.
fn plan_all(ast: &ProgramAst, dataset: &Dataset, cfg: &TrainConfig) -> Result<Vec<Arc<Plan>>, TrainError> {
    let opts = GroundOptions { depth_limit: cfg.depth_limit };
    let mut first: HashMap<String, usize> = HashMap::new();
    let keys: Vec<usize> =
        dataset.examples.iter().enumerate().map(|(i, ex)| *first.entry(ex.query.to_string()).or_insert(i)).collect();
    let mut unique: Vec<usize> = first.into_values().collect();
    unique.sort_unstable();
    let built: HashMap<usize, Arc<Plan>> = unique
        .par_iter()
        .map(|&i| {
            let err = |e: EngineError| TrainError::Example { index: i, source: e };
            let g = crate::ground::ground_query(ast, &dataset.examples[i].query, &opts).map_err(|e| err(e.into()))?;
            let plan = Plan::new(g).map_err(|e| err(e.into()))?;
            Ok((i, Arc::new(plan)))
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<Result<_, TrainError>>()?;
    Ok(keys.iter().map(|k| Arc::clone(&built[k])).collect())
}
