//! A program together with its data and learnable parameters, ready to query.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::{init_network, AutodiffError, ParameterStore, Tensor};
use crate::ground::{ground_query, GroundError, GroundOptions, GroundProgram};
use crate::syntax::{parse, Constraint, DataSource, Family, Literal, ParseError, ProgramAst, Term};
use crate::wmi::{Context, Plan, WmiError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("data `{name}`: {message}")]
    Data { name: String, message: String },
    #[error(transparent)]
    Param(#[from] AutodiffError),
}

/// Failure anywhere between a ground query and its result.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error(transparent)]
    Ground(#[from] GroundError),
    #[error(transparent)]
    Wmi(#[from] WmiError),
}

impl EngineError {
    /// Short machine-readable name of the failing stage and variant.
    pub fn kind(&self) -> &'static str {
        match self {
            EngineError::Ground(e) => match e {
                GroundError::DepthExceeded { .. } => "DepthExceeded",
                GroundError::UnboundComparison(_) => "UnboundComparison",
                GroundError::NonStratifiedNegation(_) => "NonStratifiedNegation",
                GroundError::NonGround(_) => "NonGround",
                GroundError::NotNumeric(_) => "NotNumeric",
                GroundError::DuplicateRandomVariable(_) => "DuplicateRandomVariable",
                GroundError::NotBoolean(_) => "NotBoolean",
                GroundError::DependentParameters(_) => "DependentParameters",
                GroundError::Eval(..) => "EvalError",
            },
            EngineError::Wmi(e) => match e {
                WmiError::Config(_) => "InvalidConfig",
                WmiError::Circuit(_) => "CircuitError",
                WmiError::Dist { .. } => "DistributionError",
                WmiError::Eval { .. } => "EvalError",
                WmiError::MixedAtomUnsupported(_) => "MixedAtomUnsupported",
                WmiError::JointSupportTooLarge(_) => "JointSupportTooLarge",
                WmiError::NumericError(_) => "NumericError",
                WmiError::InconsistentEncoding(_) => "InconsistentEncoding",
                WmiError::NeuralOnRandomVariable(_) => "NeuralOnRandomVariable",
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub ast: ProgramAst,
    pub store: ParameterStore,
    pub data: BTreeMap<String, Vec<f64>>,
}

impl Model {
    /// Reads a program file. Relative `#data` paths resolve against the
    /// program's directory.
    pub fn load(path: &Path, init_seed: u64) -> Result<Model, ModelError> {
        let src = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Model::from_source(&src, &base, init_seed)
    }

    /// Parses `src` and sets up its parameters. Network weights are drawn
    /// from a generator seeded with `init_seed`.
    pub fn from_source(src: &str, base: &Path, init_seed: u64) -> Result<Model, ModelError> {
        let ast = parse(src)?;
        let data = load_data(&ast, base)?;
        let store = initial_store(&ast, init_seed)?;
        Ok(Model { ast, store, data })
    }

    pub fn context(&self) -> Context<'_> {
        Context { store: &self.store, networks: &self.ast.networks, data: &self.data }
    }

    pub fn ground(&self, query: &crate::syntax::Atom, opts: &GroundOptions) -> Result<GroundProgram, EngineError> {
        Ok(ground_query(&self.ast, query, opts)?)
    }

    pub fn plan(&self, query: &crate::syntax::Atom, opts: &GroundOptions) -> Result<Plan, EngineError> {
        Ok(Plan::new(self.ground(query, opts)?)?)
    }
}

fn io_error(path: &Path, e: std::io::Error) -> ModelError {
    ModelError::Io { path: path.display().to_string(), message: e.to_string() }
}

/// Resolves every `#data` binding to its vector.
pub fn load_data(ast: &ProgramAst, base: &Path) -> Result<BTreeMap<String, Vec<f64>>, ModelError> {
    let mut out = BTreeMap::new();
    for d in &ast.data {
        let values = match &d.source {
            DataSource::Inline(v) => v.clone(),
            DataSource::Path(p) => {
                let path: PathBuf = base.join(p);
                let text = std::fs::read_to_string(&path).map_err(|e| io_error(&path, e))?;
                parse_numbers(&text).map_err(|message| ModelError::Data { name: d.name.clone(), message })?
            }
        };
        out.insert(d.name.clone(), values);
    }
    Ok(out)
}

/// A JSON array of numbers, or numbers separated by whitespace or commas.
pub fn parse_numbers(text: &str) -> Result<Vec<f64>, String> {
    let trimmed = text.trim();
    if trimmed.starts_with('[') {
        return serde_json::from_str(trimmed).map_err(|e| e.to_string());
    }
    trimmed
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| format!("`{s}` is not a number")))
        .collect()
}

/// Declared parameters, network weights, and a default for every `t(name)`
/// the program uses without declaring.
pub fn initial_store(ast: &ProgramAst, init_seed: u64) -> Result<ParameterStore, ModelError> {
    let mut store = ParameterStore::new();
    for p in &ast.params {
        let value = if p.init.len() == 1 { Tensor::scalar(p.init[0]) } else { Tensor::vector(p.init.clone()) };
        store.insert(&p.name, value, p.constraint)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
    for net in &ast.networks {
        for (name, t) in init_network(net, &mut rng) {
            store.insert_raw(&name, t, Constraint::Real)?;
        }
    }
    for (name, c) in undeclared_params(ast) {
        if !store.contains(&name) {
            let init = match c {
                Constraint::Real => 0.0,
                Constraint::Positive => 1.0,
                Constraint::Unit => 0.5,
            };
            store.insert(&name, Tensor::scalar(init), c)?;
        }
    }
    Ok(store)
}

/// Parameters referenced by `t(name)` without a `#param` line, in order of
/// first use. A bare `t(name)` in a positive distribution slot is taken as
/// positive, and as a probability when it is a Bernoulli parameter or a
/// clause annotation. Anything else is real.
pub fn undeclared_params(ast: &ProgramAst) -> Vec<(String, Constraint)> {
    let mut out: Vec<(String, Constraint)> = Vec::new();
    let mut visit = |t: &Term, top: Constraint| {
        let mut stack = vec![(t, top)];
        while let Some((t, c)) = stack.pop() {
            match t {
                Term::Param(p) => {
                    if ast.param(p).is_none() && !out.iter().any(|(n, _)| n == p) {
                        out.push((p.clone(), c));
                    }
                }
                Term::Compound(_, args) | Term::Func(_, args) | Term::List(args) => {
                    stack.extend(args.iter().rev().map(|a| (a, Constraint::Real)));
                }
                _ => {}
            }
        }
    };
    for d in &ast.dist_facts {
        for (i, p) in d.params.iter().enumerate() {
            let c = if d.family.positive_slot(i) {
                Constraint::Positive
            } else if d.family == Family::Bernoulli {
                Constraint::Unit
            } else {
                Constraint::Real
            };
            visit(p, c);
        }
    }
    for cl in &ast.clauses {
        if let Some(p) = &cl.prob {
            visit(p, Constraint::Unit);
        }
        for lit in &cl.body {
            if let Literal::Cmp(c) = lit {
                visit(&c.lhs, Constraint::Real);
                visit(&c.rhs, Constraint::Real);
            }
        }
    }
    out
}
