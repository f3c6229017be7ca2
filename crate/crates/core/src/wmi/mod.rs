//! Query probabilities by weighted model integration. Discrete variables are
//! summed out exactly while walking the circuit; continuous variables are
//! sampled through their reparametrization and averaged.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use crate::autodiff::{mlp_forward, ParameterStore, Scalar};
use crate::circuit::{compile_program, Circuit, CircuitError, FALSE, TRUE};
use crate::dist::{resolve, sample_base, Dim, DistError, ParamVal, Resolved};
use crate::ground::{eval, Env, EvalError, GroundProgram, NumExpr, Val};
use crate::relax::relax;
use crate::syntax::{CmpOp, NetworkDecl};

/// Samples per independently seeded block.
pub const BLOCK: usize = 256;
/// Largest joint support enumerated for discrete variables that share atoms.
pub const JOINT_CAP: usize = 10_000;
pub const DEFAULT_SAMPLES: usize = 10_000;
pub const DEFAULT_BETA: f64 = 50.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WmiError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Circuit(#[from] CircuitError),
    #[error("random variable `{rv}`: {source}")]
    Dist { rv: String, source: DistError },
    #[error("evaluating `{what}`: {source}")]
    Eval { what: String, source: EvalError },
    #[error("atom `{0}` couples discrete variables whose joint support exceeds {JOINT_CAP} combinations")]
    MixedAtomUnsupported(String),
    #[error("discrete variables {0} have a joint support above {JOINT_CAP} combinations")]
    JointSupportTooLarge(String),
    #[error("atom `{0}` evaluated to NaN")]
    NumericError(String),
    #[error("inconsistent discrete encoding: {0}")]
    InconsistentEncoding(String),
    #[error("network call in atom `{0}` takes a random variable as input")]
    NeuralOnRandomVariable(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Hard,
    Soft,
    StraightThrough,
}

impl Mode {
    pub fn from_name(s: &str) -> Option<Mode> {
        match s {
            "hard" => Some(Mode::Hard),
            "soft" => Some(Mode::Soft),
            "st" | "straight_through" => Some(Mode::StraightThrough),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Hard => "hard",
            Mode::Soft => "soft",
            Mode::StraightThrough => "straight_through",
        }
    }
}

/// Sharpness of the relaxed indicators. `beta_prime` is the second slope of
/// the equality relaxation and defaults to `beta`.
#[derive(Debug, Clone, PartialEq)]
pub struct Coolness {
    pub beta: f64,
    pub beta_prime: Option<f64>,
    /// Overrides keyed by atom index.
    pub per_atom: BTreeMap<usize, f64>,
}

impl Coolness {
    pub fn global(beta: f64) -> Self {
        Coolness { beta, beta_prime: None, per_atom: BTreeMap::new() }
    }

    pub fn for_atom(&self, atom: usize) -> (f64, f64) {
        match self.per_atom.get(&atom) {
            Some(&b) => (b, b),
            None => (self.beta, self.beta_prime.unwrap_or(self.beta)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceConfig {
    pub n_samples: usize,
    pub seed: u64,
    pub mode: Mode,
    pub coolness: Coolness,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            n_samples: DEFAULT_SAMPLES,
            seed: 0,
            mode: Mode::Hard,
            coolness: Coolness::global(DEFAULT_BETA),
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<(), WmiError> {
        if self.n_samples == 0 {
            return Err(WmiError::Config("n_samples must be at least 1".into()));
        }
        let c = &self.coolness;
        let slopes = std::iter::once(c.beta).chain(c.beta_prime).chain(c.per_atom.values().copied());
        for b in slopes {
            if !(b > 0.0 && b.is_finite()) {
                return Err(WmiError::Config(format!("coolness must be positive, got {b}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryResult {
    pub query: String,
    pub estimate: f64,
    pub std_error: f64,
    pub n_samples: usize,
    pub mode: Mode,
    pub seed: u64,
    /// True when nothing was sampled and the estimate is exact.
    pub exact: bool,
    /// Share of random variables handled by exact summation.
    pub discrete_exact_fraction: f64,
    /// Some atom compares a continuous variable for equality, a
    /// probability-zero event in hard mode.
    pub continuous_equality: bool,
}

impl QueryResult {
    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "query": self.query,
            "estimate": self.estimate,
            "std_error": self.std_error,
            "n_samples": self.n_samples,
            "mode": self.mode.name(),
            "seed": self.seed,
            "exact": self.exact,
            "discrete_exact_fraction": self.discrete_exact_fraction,
            "continuous_equality": self.continuous_equality,
        })
    }
}

/// Where parameter, network and data references are resolved.
#[derive(Clone, Copy)]
pub struct Context<'a> {
    pub store: &'a ParameterStore,
    pub networks: &'a [NetworkDecl],
    pub data: &'a BTreeMap<String, Vec<f64>>,
}

/// Parameter-level environment: learnable values, networks and data, but no
/// random variables.
pub(crate) struct ParamEnv<'a, S> {
    pub values: BTreeMap<String, Vec<S>>,
    pub networks: &'a [NetworkDecl],
    pub data: &'a BTreeMap<String, Vec<f64>>,
}

impl<'a, S: Scalar> ParamEnv<'a, S> {
    /// `leaf` turns each raw stored value into a scalar; constraints are
    /// applied on top.
    pub fn new(ctx: Context<'a>, mut leaf: impl FnMut(&str, f64) -> S) -> Self {
        let mut values = BTreeMap::new();
        for name in ctx.store.names() {
            let c = ctx.store.constraint(name).expect("listed name");
            let raw = &ctx.store.raw(name).expect("listed name").values;
            values.insert(name.to_string(), raw.iter().map(|&x| c.apply(leaf(name, x))).collect());
        }
        ParamEnv { values, networks: ctx.networks, data: ctx.data }
    }
}

impl<S: Scalar> Env<S> for ParamEnv<'_, S> {
    fn rv(&self, index: usize) -> Result<Val<S>, EvalError> {
        Err(EvalError::Unbound(format!("random variable #{index}")))
    }

    fn param(&self, name: &str) -> Result<Val<S>, EvalError> {
        match self.values.get(name) {
            Some(v) if v.len() == 1 => Ok(Val::Scalar(v[0])),
            Some(v) => Ok(Val::Vector(v.clone())),
            None => Err(EvalError::Unbound(format!("t({name})"))),
        }
    }

    fn data(&self, name: &str) -> Result<Vec<f64>, EvalError> {
        self.data.get(name).cloned().ok_or_else(|| EvalError::Unbound(name.to_string()))
    }

    fn neural(&self, net: &str, input: &[S]) -> Result<Vec<S>, EvalError> {
        let decl = self.networks.iter().find(|n| n.name == net).ok_or_else(|| EvalError::Unbound(net.to_string()))?;
        mlp_forward(decl, &self.values, input).map_err(|e| EvalError::Network(net.to_string(), e.to_string()))
    }
}

/// Sample-level environment: random variable values and pre-evaluated
/// parameter subexpressions (`$k`).
struct SampleEnv<'a, S> {
    rvs: &'a [Option<Val<S>>],
    slots: &'a [Val<S>],
}

impl<S: Scalar> Env<S> for SampleEnv<'_, S> {
    fn rv(&self, index: usize) -> Result<Val<S>, EvalError> {
        self.rvs
            .get(index)
            .and_then(Clone::clone)
            .ok_or_else(|| EvalError::Unbound(format!("random variable #{index}")))
    }

    fn param(&self, name: &str) -> Result<Val<S>, EvalError> {
        name.strip_prefix('$')
            .and_then(|k| k.parse::<usize>().ok())
            .and_then(|k| self.slots.get(k).cloned())
            .ok_or_else(|| EvalError::Unbound(name.to_string()))
    }

    fn data(&self, name: &str) -> Result<Vec<f64>, EvalError> {
        Err(EvalError::Unbound(name.to_string()))
    }

    fn neural(&self, net: &str, _: &[S]) -> Result<Vec<S>, EvalError> {
        Err(EvalError::Unbound(net.to_string()))
    }
}

/// Value of an atom inside a discrete table row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AtomValue<S> {
    Known(bool),
    Weighted(S),
}

/// Joint support of discrete variables that share atoms: one row per joint
/// value with its probability and the value of each listed atom.
#[derive(Debug, Clone)]
pub struct DiscreteTable<S> {
    pub atoms: Vec<usize>,
    pub rows: Vec<(S, Vec<AtomValue<S>>)>,
}

/// Bottom-up weighted pass over the circuit. Atoms listed in a table are
/// summed out over its rows, which must have probabilities summing to one;
/// every other atom takes its value from `continuous`.
pub fn evaluate_circuit_weighted<S: Scalar>(
    c: &Circuit,
    tables: &[DiscreteTable<S>],
    continuous: &[Option<S>],
) -> Result<S, WmiError> {
    let root = c.root();
    if Circuit::is_terminal(root) {
        return Ok(S::constant(if root == TRUE { 1.0 } else { 0.0 }));
    }
    let mut place: HashMap<usize, (usize, usize)> = HashMap::new();
    for (t, table) in tables.iter().enumerate() {
        for (k, &a) in table.atoms.iter().enumerate() {
            if place.insert(a, (t, k)).is_some() {
                return Err(WmiError::InconsistentEncoding(format!("atom {a} belongs to two tables")));
            }
        }
        let mut total = 0.0;
        for (p, values) in &table.rows {
            if values.len() != table.atoms.len() {
                return Err(WmiError::InconsistentEncoding(format!(
                    "row of {} values for {} atoms",
                    values.len(),
                    table.atoms.len()
                )));
            }
            total += p.value();
        }
        if (total - 1.0).abs() > 1e-6 {
            return Err(WmiError::InconsistentEncoding(format!("row probabilities sum to {total}")));
        }
    }
    let nodes = c.nodes();
    let table_of = |id: u32| -> Option<usize> {
        if Circuit::is_terminal(id) {
            None
        } else {
            place.get(&c.atom(id)).map(|&(t, _)| t)
        }
    };
    // A table node is entered from outside its table only at the root or
    // below a node of another kind; only there is the table summed out.
    let mut entry = vec![false; nodes.len()];
    entry[root as usize] = true;
    for id in 2..nodes.len() as u32 {
        let n = c.node(id);
        for child in [n.lo, n.hi] {
            if table_of(child) != table_of(id) {
                entry[child as usize] = true;
            }
        }
    }
    let mut w: Vec<S> = vec![S::constant(0.0); nodes.len()];
    w[TRUE as usize] = S::constant(1.0);
    for id in 2..nodes.len() as u32 {
        let n = c.node(id);
        let atom = c.atom(id);
        match place.get(&atom) {
            Some(&(t, _)) => {
                if !entry[id as usize] {
                    continue;
                }
                let mut acc = S::constant(0.0);
                for (p, values) in &tables[t].rows {
                    let mut memo = HashMap::new();
                    let v = follow(c, id, t, values, &place, &w, &mut memo);
                    acc = acc + *p * v;
                }
                w[id as usize] = acc;
            }
            None => {
                let v = continuous
                    .get(atom)
                    .copied()
                    .flatten()
                    .ok_or_else(|| WmiError::InconsistentEncoding(format!("atom {atom} has no value")))?;
                w[id as usize] = v * w[n.hi as usize] + (S::constant(1.0) - v) * w[n.lo as usize];
            }
        }
    }
    Ok(w[root as usize])
}

/// Weight of `id` under one table row, walking the table's block.
fn follow<S: Scalar>(
    c: &Circuit,
    id: u32,
    table: usize,
    values: &[AtomValue<S>],
    place: &HashMap<usize, (usize, usize)>,
    w: &[S],
    memo: &mut HashMap<u32, S>,
) -> S {
    if id == FALSE || id == TRUE {
        return w[id as usize];
    }
    let (t, k) = match place.get(&c.atom(id)) {
        Some(&(t, k)) if t == table => (t, k),
        _ => return w[id as usize],
    };
    debug_assert_eq!(t, table);
    if let Some(&v) = memo.get(&id) {
        return v;
    }
    let n = c.node(id);
    let v = match values[k] {
        AtomValue::Known(true) => follow(c, n.hi, table, values, place, w, memo),
        AtomValue::Known(false) => follow(c, n.lo, table, values, place, w, memo),
        AtomValue::Weighted(v) => {
            let hi = follow(c, n.hi, table, values, place, w, memo);
            let lo = follow(c, n.lo, table, values, place, w, memo);
            v * hi + (S::constant(1.0) - v) * lo
        }
    };
    memo.insert(id, v);
    v
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum AtomClass {
    /// No discrete variable involved.
    Free,
    Discrete(usize),
    Mixed(usize),
}

#[derive(Debug, Clone)]
struct AtomPlan {
    g: NumExpr,
    op: CmpOp,
    class: AtomClass,
}

/// Everything about a ground query that does not depend on parameter
/// values: the circuit, the discrete groups and the atoms rewritten so that
/// parameter-only subexpressions are evaluated once per query.
#[derive(Debug, Clone)]
pub struct Plan {
    pub program: GroundProgram,
    pub circuit: Circuit,
    atoms: Vec<AtomPlan>,
    slots: Vec<NumExpr>,
    groups: Vec<Vec<usize>>,
    group_atoms: Vec<Vec<usize>>,
    continuous: Vec<usize>,
}

impl Plan {
    pub fn new(program: GroundProgram) -> Result<Plan, WmiError> {
        let circuit = compile_program(&program)?;
        let rvs = &program.rvs;
        let mut parent: Vec<usize> = (0..rvs.len()).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for a in &program.atoms {
            let d: Vec<usize> = a.owners.iter().copied().filter(|&o| rvs[o].kind.is_discrete()).collect();
            for pair in d.windows(2) {
                let (x, y) = (find(&mut parent, pair[0]), find(&mut parent, pair[1]));
                parent[x.max(y)] = x.min(y);
            }
        }
        let mut group_of_root: BTreeMap<usize, usize> = BTreeMap::new();
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for (r, rv) in rvs.iter().enumerate() {
            if rv.kind.is_discrete() {
                let root = find(&mut parent, r);
                let g = *group_of_root.entry(root).or_insert_with(|| {
                    groups.push(Vec::new());
                    groups.len() - 1
                });
                groups[g].push(r);
            }
        }
        let continuous = (0..rvs.len()).filter(|&r| !rvs[r].kind.is_discrete()).collect();
        let mut slots = Vec::new();
        let mut atoms = Vec::with_capacity(program.atoms.len());
        let mut group_atoms = vec![Vec::new(); groups.len()];
        for (i, a) in program.atoms.iter().enumerate() {
            let disc = a.owners.iter().find(|&&o| rvs[o].kind.is_discrete());
            let class = match disc {
                None => AtomClass::Free,
                Some(&o) => {
                    let g = group_of_root[&find(&mut parent, o)];
                    group_atoms[g].push(i);
                    if a.owners.iter().all(|&o| rvs[o].kind.is_discrete()) {
                        AtomClass::Discrete(g)
                    } else {
                        AtomClass::Mixed(g)
                    }
                }
            };
            let g = slot_out(&a.g, &mut slots).ok_or_else(|| WmiError::NeuralOnRandomVariable(program.atom_text(i)))?;
            atoms.push(AtomPlan { g, op: a.op, class });
        }
        Ok(Plan { program, circuit, atoms, slots, groups, group_atoms, continuous })
    }

    pub fn query(&self) -> String {
        self.program.query.to_string()
    }

    /// True when there is nothing to sample.
    pub fn is_exact(&self) -> bool {
        self.continuous.is_empty()
    }

    pub(crate) fn discrete_fraction(&self) -> f64 {
        let n = self.program.rvs.len();
        if n == 0 {
            1.0
        } else {
            (n - self.continuous.len()) as f64 / n as f64
        }
    }

    pub(crate) fn continuous_equality(&self) -> bool {
        let rvs = &self.program.rvs;
        self.program.atoms.iter().any(|a| a.op == CmpOp::Eq && a.owners.iter().any(|&o| !rvs[o].kind.is_discrete()))
    }
}

/// Replaces every maximal non-constant subexpression free of random
/// variables by a slot reference `$k`. `None` when a network call takes a
/// random variable.
fn slot_out(e: &NumExpr, slots: &mut Vec<NumExpr>) -> Option<NumExpr> {
    let mut rvs = Vec::new();
    e.rvs_into(&mut rvs);
    if rvs.is_empty() {
        if let NumExpr::Const(_) = e {
            return Some(e.clone());
        }
        slots.push(e.clone());
        return Some(NumExpr::Param(format!("${}", slots.len() - 1)));
    }
    Some(match e {
        NumExpr::Call(f, args) => {
            NumExpr::Call(f.clone(), args.iter().map(|a| slot_out(a, slots)).collect::<Option<_>>()?)
        }
        NumExpr::List(xs) => NumExpr::List(xs.iter().map(|a| slot_out(a, slots)).collect::<Option<_>>()?),
        NumExpr::Neural(..) => return None,
        other => other.clone(),
    })
}

/// Parameter-dependent quantities of one query evaluation. Gradients of the
/// sample-level computation are taken with respect to exactly these values.
#[derive(Debug, Clone)]
pub(crate) struct Interface<S> {
    /// Dimensions of each continuous variable, aligned with `Plan::continuous`.
    pub dims: Vec<Vec<Dim<S>>>,
    pub slots: Vec<Val<S>>,
    /// Row probabilities of each discrete group.
    pub probs: Vec<Vec<S>>,
}

impl<S: Scalar> Interface<S> {
    pub fn flatten(&self) -> Vec<S> {
        let mut out = Vec::new();
        for d in self.dims.iter().flatten() {
            out.push(d.a);
            out.push(d.b);
        }
        for s in &self.slots {
            out.extend(s.clone().into_vec());
        }
        out.extend(self.probs.iter().flatten().copied());
        out
    }

    /// Same structure with every scalar replaced, visiting scalars in
    /// `flatten` order.
    pub fn map<L: Scalar>(&self, f: &mut impl FnMut(S) -> L) -> Interface<L> {
        let dims = self
            .dims
            .iter()
            .map(|ds| {
                ds.iter()
                    .map(|d| {
                        let a = f(d.a);
                        let b = f(d.b);
                        Dim { family: d.family, a, b, shape: d.shape }
                    })
                    .collect()
            })
            .collect();
        let slots = self
            .slots
            .iter()
            .map(|s| match s {
                Val::Scalar(x) => Val::Scalar(f(*x)),
                Val::Vector(xs) => Val::Vector(xs.iter().map(|&x| f(x)).collect()),
            })
            .collect();
        let probs = self.probs.iter().map(|ps| ps.iter().map(|&p| f(p)).collect()).collect();
        Interface { dims, slots, probs }
    }
}

/// Parameter-independent part of the discrete tables.
#[derive(Debug, Clone)]
pub(crate) struct Rows {
    /// Joint values of the group's variables, one vector per row.
    pub values: Vec<Vec<f64>>,
    /// Truth of each purely discrete group atom per row; `None` for atoms
    /// that also involve continuous variables.
    pub truth: Vec<Vec<Option<bool>>>,
}

fn eval_err(what: impl Into<String>) -> impl FnOnce(EvalError) -> WmiError {
    let what = what.into();
    move |source| WmiError::Eval { what, source }
}

/// Resolves distributions, slots and discrete tables under `env`.
pub(crate) fn prepare<S: Scalar, E: Env<S>>(plan: &Plan, env: &E) -> Result<(Interface<S>, Vec<Rows>), WmiError> {
    let p = &plan.program;
    let mut resolved: Vec<Option<Resolved<S>>> = vec![None; p.rvs.len()];
    for (r, rv) in p.rvs.iter().enumerate() {
        let mut params = Vec::with_capacity(rv.params.len());
        for e in &rv.params {
            let val = eval(e, env).map_err(eval_err(&rv.name))?;
            params.push(ParamVal { val, neural: matches!(e, NumExpr::Neural(..)) });
        }
        resolved[r] =
            Some(resolve(rv.family, params).map_err(|source| WmiError::Dist { rv: rv.name.clone(), source })?);
    }
    let dims = plan
        .continuous
        .iter()
        .map(|&r| match resolved[r].take() {
            Some(Resolved::Continuous(d)) => d,
            _ => unreachable!("continuous family resolved as discrete"),
        })
        .collect();
    let mut slots = Vec::with_capacity(plan.slots.len());
    for (k, e) in plan.slots.iter().enumerate() {
        slots.push(eval(e, env).map_err(eval_err(format!("parameter expression ${k}")))?);
    }
    let slot_values: Vec<Val<f64>> = slots
        .iter()
        .map(|s: &Val<S>| match s {
            Val::Scalar(x) => Val::Scalar(x.value()),
            Val::Vector(xs) => Val::Vector(xs.iter().map(|x| x.value()).collect()),
        })
        .collect();
    let mut probs = Vec::with_capacity(plan.groups.len());
    let mut rows = Vec::with_capacity(plan.groups.len());
    for (g, members) in plan.groups.iter().enumerate() {
        let supports: Vec<Vec<(f64, S)>> = members
            .iter()
            .map(|&r| match resolved[r].take() {
                Some(Resolved::Discrete(s)) => s,
                _ => unreachable!("discrete family resolved as continuous"),
            })
            .collect();
        let size = supports.iter().try_fold(1usize, |acc, s| acc.checked_mul(s.len()).filter(|&n| n <= JOINT_CAP));
        if size.is_none() {
            let mixed = plan.group_atoms[g].iter().find(|&&a| matches!(plan.atoms[a].class, AtomClass::Mixed(_)));
            return Err(match mixed {
                Some(&a) => WmiError::MixedAtomUnsupported(p.atom_text(a)),
                None => WmiError::JointSupportTooLarge(
                    members.iter().map(|&r| p.rvs[r].name.as_str()).collect::<Vec<_>>().join(", "),
                ),
            });
        }
        let mut values: Vec<Vec<f64>> = vec![Vec::new()];
        let mut ps: Vec<S> = vec![S::constant(1.0)];
        for (i, s) in supports.iter().enumerate() {
            let mut nv = Vec::with_capacity(values.len() * s.len());
            let mut np = Vec::with_capacity(values.len() * s.len());
            for (v, &p0) in values.iter().zip(&ps) {
                for &(x, px) in s {
                    let mut v = v.clone();
                    v.push(x);
                    nv.push(v);
                    np.push(if i == 0 { px } else { p0 * px });
                }
            }
            values = nv;
            ps = np;
        }
        let mut rv_vals: Vec<Option<Val<f64>>> = vec![None; p.rvs.len()];
        let mut truth = Vec::with_capacity(values.len());
        for row in &values {
            for (&r, &x) in members.iter().zip(row) {
                rv_vals[r] = Some(Val::Scalar(x));
            }
            let env = SampleEnv { rvs: &rv_vals, slots: &slot_values };
            let mut t = Vec::with_capacity(plan.group_atoms[g].len());
            for &a in &plan.group_atoms[g] {
                let ap = &plan.atoms[a];
                t.push(match ap.class {
                    AtomClass::Discrete(_) => {
                        let gv = atom_value(plan, a, &env)?;
                        Some(ap.op.holds(gv))
                    }
                    _ => None,
                });
            }
            truth.push(t);
        }
        probs.push(ps);
        rows.push(Rows { values, truth });
    }
    Ok((Interface { dims, slots, probs }, rows))
}

fn atom_value<S: Scalar>(plan: &Plan, a: usize, env: &SampleEnv<'_, S>) -> Result<S, WmiError> {
    let g = eval(&plan.atoms[a].g, env).and_then(Val::scalar).map_err(eval_err(plan.program.atom_text(a)))?;
    if g.value().is_nan() {
        return Err(WmiError::NumericError(plan.program.atom_text(a)));
    }
    Ok(g)
}

fn indicator<S: Scalar>(g: S, op: CmpOp, mode: Mode, (beta, beta_prime): (f64, f64)) -> S {
    let hard = if op.holds(g.value()) { 1.0 } else { 0.0 };
    match mode {
        Mode::Hard => S::constant(hard),
        Mode::Soft => relax(g, op, beta, beta_prime),
        Mode::StraightThrough => S::straight_through(hard, relax(g, op, beta, beta_prime)),
    }
}

/// Number of base draws one sample needs.
pub(crate) fn draws_per_sample<S>(iface: &Interface<S>) -> usize {
    iface.dims.iter().map(Vec::len).sum()
}

/// Base draws for one sample, in variable then dimension order.
pub(crate) fn draw<S>(iface: &Interface<S>, rng: &mut ChaCha8Rng, out: &mut Vec<f64>) {
    out.clear();
    for d in iface.dims.iter().flatten() {
        out.push(sample_base(d.family, rng).expect("continuous family"));
    }
}

/// Circuit value for one vector of base draws.
pub(crate) fn sample_weight<S: Scalar>(
    plan: &Plan,
    iface: &Interface<S>,
    rows: &[Rows],
    u: &[f64],
    cfg: &InferenceConfig,
) -> Result<S, WmiError> {
    let p = &plan.program;
    let mut rv_vals: Vec<Option<Val<S>>> = vec![None; p.rvs.len()];
    let mut k = 0;
    for (&r, ds) in plan.continuous.iter().zip(&iface.dims) {
        let xs: Vec<S> = ds
            .iter()
            .map(|d| {
                let x = d.reparam(u[k]);
                k += 1;
                x
            })
            .collect();
        rv_vals[r] = Some(if xs.len() == 1 { Val::Scalar(xs[0]) } else { Val::Vector(xs) });
    }
    let mut continuous: Vec<Option<S>> = vec![None; p.atoms.len()];
    for (a, ap) in plan.atoms.iter().enumerate() {
        if ap.class == AtomClass::Free {
            let env = SampleEnv { rvs: &rv_vals, slots: &iface.slots };
            let g = atom_value(plan, a, &env)?;
            continuous[a] = Some(indicator(g, ap.op, cfg.mode, cfg.coolness.for_atom(a)));
        }
    }
    let mut tables = Vec::with_capacity(plan.groups.len());
    for (g, members) in plan.groups.iter().enumerate() {
        let mut table_rows = Vec::with_capacity(rows[g].values.len());
        for (i, row) in rows[g].values.iter().enumerate() {
            let mut values = Vec::with_capacity(plan.group_atoms[g].len());
            for (j, &a) in plan.group_atoms[g].iter().enumerate() {
                values.push(match rows[g].truth[i][j] {
                    Some(t) => AtomValue::Known(t),
                    None => {
                        for (&r, &x) in members.iter().zip(row) {
                            rv_vals[r] = Some(Val::Scalar(S::constant(x)));
                        }
                        let env = SampleEnv { rvs: &rv_vals, slots: &iface.slots };
                        let gv = atom_value(plan, a, &env)?;
                        AtomValue::Weighted(indicator(gv, plan.atoms[a].op, cfg.mode, cfg.coolness.for_atom(a)))
                    }
                });
            }
            table_rows.push((iface.probs[g][i], values));
        }
        tables.push(DiscreteTable { atoms: plan.group_atoms[g].clone(), rows: table_rows });
    }
    evaluate_circuit_weighted(&plan.circuit, &tables, &continuous)
}

/// Count, mean and sum of squared deviations of circuit values.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub(crate) struct Moments {
    pub n: f64,
    pub mean: f64,
    pub m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.n += 1.0;
        let d = x - self.mean;
        self.mean += d / self.n;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(self, o: Moments) -> Moments {
        if self.n == 0.0 {
            return o;
        }
        if o.n == 0.0 {
            return self;
        }
        let n = self.n + o.n;
        let d = o.mean - self.mean;
        Moments { n, mean: self.mean + d * o.n / n, m2: self.m2 + o.m2 + d * d * self.n * o.n / n }
    }

    pub fn std_error(&self) -> f64 {
        if self.n < 2.0 {
            0.0
        } else {
            (self.m2 / (self.n - 1.0)).sqrt() / self.n.sqrt()
        }
    }
}

/// Pairwise reduction in index order; the result does not depend on how the
/// items were computed.
pub(crate) fn tree_reduce<T>(mut items: Vec<T>, f: impl Fn(T, T) -> T) -> Option<T> {
    while items.len() > 1 {
        let mut next = Vec::with_capacity(items.len().div_ceil(2));
        let mut it = items.into_iter();
        while let Some(a) = it.next() {
            next.push(match it.next() {
                Some(b) => f(a, b),
                None => a,
            });
        }
        items = next;
    }
    items.pop()
}

/// The generator for one block: one ChaCha stream per block of the seed.
pub(crate) fn block_rng(seed: u64, block: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(block as u64);
    rng
}

pub(crate) fn block_range(n: usize, block: usize) -> std::ops::Range<usize> {
    block * BLOCK..((block + 1) * BLOCK).min(n)
}

/// Estimates the probability of the plan's query.
pub fn infer(plan: &Plan, ctx: Context<'_>, cfg: &InferenceConfig) -> Result<QueryResult, WmiError> {
    cfg.validate()?;
    let env = ParamEnv::new(ctx, |_, x| x);
    let (iface, rows) = prepare::<f64, _>(plan, &env)?;
    let result = |m: Moments, exact: bool| QueryResult {
        query: plan.query(),
        estimate: m.mean,
        std_error: m.std_error(),
        n_samples: cfg.n_samples,
        mode: cfg.mode,
        seed: cfg.seed,
        exact,
        discrete_exact_fraction: plan.discrete_fraction(),
        continuous_equality: plan.continuous_equality(),
    };
    if draws_per_sample(&iface) == 0 {
        let mut m = Moments::default();
        m.push(sample_weight(plan, &iface, &rows, &[], cfg)?);
        return Ok(result(m, true));
    }
    let blocks = cfg.n_samples.div_ceil(BLOCK);
    let parts: Vec<Moments> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = block_rng(cfg.seed, b);
            let mut u = Vec::new();
            let mut m = Moments::default();
            for _ in block_range(cfg.n_samples, b) {
                draw(&iface, &mut rng, &mut u);
                m.push(sample_weight(plan, &iface, &rows, &u, cfg)?);
            }
            Ok(m)
        })
        .collect::<Result<_, WmiError>>()?;
    Ok(result(tree_reduce(parts, Moments::merge).unwrap_or_default(), false))
}

/// One joint draw of a query's random variables.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampledWorld {
    pub values: BTreeMap<String, Vec<f64>>,
    /// Whether the query holds in this world, with hard comparisons.
    pub holds: bool,
}

/// Draws `n` complete worlds. Continuous variables use the same streams as
/// `infer`; each discrete group then picks one joint row by its probability.
pub fn sample_worlds(plan: &Plan, ctx: Context<'_>, n: usize, seed: u64) -> Result<Vec<SampledWorld>, WmiError> {
    let env = ParamEnv::new(ctx, |_, x| x);
    let (iface, rows) = prepare::<f64, _>(plan, &env)?;
    let p = &plan.program;
    let blocks: Vec<Vec<SampledWorld>> = (0..n.div_ceil(BLOCK))
        .into_par_iter()
        .map(|b| {
            let mut rng = block_rng(seed, b);
            let mut u = Vec::new();
            let mut out = Vec::with_capacity(BLOCK);
            for _ in block_range(n, b) {
                draw(&iface, &mut rng, &mut u);
                let mut values: Vec<Vec<f64>> = vec![Vec::new(); p.rvs.len()];
                let mut rest = &u[..];
                for (&r, ds) in plan.continuous.iter().zip(&iface.dims) {
                    let (mine, tail) = rest.split_at(ds.len());
                    values[r] = ds.iter().zip(mine).map(|(d, &x)| d.reparam(x)).collect();
                    rest = tail;
                }
                for (g, members) in plan.groups.iter().enumerate() {
                    let pick: f64 = rng.random();
                    let mut acc = 0.0;
                    let mut row = rows[g].values.len() - 1;
                    for (i, &pr) in iface.probs[g].iter().enumerate() {
                        acc += pr;
                        if pick < acc {
                            row = i;
                            break;
                        }
                    }
                    for (&r, &x) in members.iter().zip(&rows[g].values[row]) {
                        values[r] = vec![x];
                    }
                }
                let rv_vals: Vec<Option<Val<f64>>> = values
                    .iter()
                    .map(|v| Some(if v.len() == 1 { Val::Scalar(v[0]) } else { Val::Vector(v.clone()) }))
                    .collect();
                let env = SampleEnv { rvs: &rv_vals, slots: &iface.slots };
                let truth = (0..plan.atoms.len())
                    .map(|a| Ok(plan.atoms[a].op.holds(atom_value(plan, a, &env)?)))
                    .collect::<Result<Vec<bool>, WmiError>>()?;
                let values = p.rvs.iter().map(|rv| rv.name.clone()).zip(values).collect();
                out.push(SampledWorld { values, holds: plan.circuit.holds(|a| truth[a]) });
            }
            Ok(out)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<Result<_, WmiError>>()?;
    Ok(blocks.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests;
