//! Reference semantics by brute force, for checking the engine.
//!
//! Nothing here shares code with grounding, compilation or sampling. A query
//! is proved top-down inside one possible world at a time; whenever a proof
//! needs a random variable the world has not fixed yet, the world is split
//! over that variable's support and each branch is proved again. Continuous
//! variables are integrated by adaptive Simpson quadrature in quantile space.

mod dual;

use std::collections::{BinaryHeap, HashMap};

use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

pub use dual::Dual;

use crate::autodiff::{ParameterStore, Scalar};
use crate::dist::{resolve, Dim, DistError, ParamVal, Resolved};
use crate::ground::{eval, Env, EvalError, NumExpr, Renamer, Subst, Val};
use crate::syntax::{Atom, Clause, Family, Literal, ProgramAst, RvKind, Term};
use crate::wmi::{Context, ParamEnv};

/// Most discrete variables one world may fix.
pub const MAX_DISCRETE: usize = 16;
/// Most worlds one enumeration may visit.
pub const MAX_WORLDS: usize = 5_000_000;
/// Most continuous dimensions quadrature handles.
pub const MAX_CONTINUOUS_DIMS: usize = 2;
pub const DEFAULT_TOLERANCE: f64 = 1e-9;
pub const DEFAULT_DEPTH_LIMIT: usize = 512;

const PANELS: usize = 64;
const MAX_DEPTH: usize = 32;
/// Most integrand evaluations in one dimension.
const MAX_EVALS: usize = 1 << 16;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("query `{0}` must be ground")]
    NonGroundQuery(String),
    #[error("too many possible worlds: {0}")]
    TooLarge(String),
    #[error("{0} continuous dimensions; at most {MAX_CONTINUOUS_DIMS} can be integrated")]
    TooManyContinuous(usize),
    #[error("quadrature error bound {0:e} is too large")]
    NonConvergent(f64),
    #[error("random variable `{0}` is continuous")]
    Continuous(String),
    #[error("random variable `{0}` has an infinite support")]
    NotFinite(String),
    #[error("derivation deeper than {limit} while proving `{goal}`")]
    DepthExceeded { limit: usize, goal: String },
    #[error("`{0}` is not ground where it must be")]
    NonGround(String),
    #[error("`{0}` is not a random variable, number, parameter or data name")]
    NotNumeric(String),
    #[error("random variable `{0}` is declared by more than one distributional fact")]
    DuplicateRandomVariable(String),
    #[error("random variable `{0}` is not boolean and cannot be used as a goal")]
    NotBoolean(String),
    #[error("parameters of `{0}` depend on random variables")]
    DependentParameters(String),
    #[error("evaluating `{0}`: {1}")]
    Eval(String, EvalError),
    #[error("random variable `{0}`: {1}")]
    Dist(String, DistError),
}

impl OracleError {
    /// True when the program is fine but too big for brute force.
    pub fn is_unavailable(&self) -> bool {
        matches!(self, OracleError::TooLarge(_) | OracleError::TooManyContinuous(_) | OracleError::NonConvergent(_))
    }
}

/// Probability with an absolute error bound; `exact` when no quadrature ran.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub bound: f64,
    pub exact: bool,
}

type World = HashMap<String, Val<f64>>;

enum Halt<S> {
    /// The proof needs this unassigned variable.
    Need {
        key: String,
        dist: Resolved<S>,
        countable: bool,
    },
    Fail(OracleError),
}

impl<S> From<OracleError> for Halt<S> {
    fn from(e: OracleError) -> Self {
        Halt::Fail(e)
    }
}

struct LocalEnv<'a, 'b, S> {
    params: &'a ParamEnv<'b, S>,
    rvs: Vec<Val<S>>,
}

impl<S: Scalar> Env<S> for LocalEnv<'_, '_, S> {
    fn rv(&self, index: usize) -> Result<Val<S>, EvalError> {
        self.rvs.get(index).cloned().ok_or_else(|| EvalError::Unbound(format!("rv{index}")))
    }

    fn param(&self, name: &str) -> Result<Val<S>, EvalError> {
        self.params.param(name)
    }

    fn data(&self, name: &str) -> Result<Vec<f64>, EvalError> {
        self.params.data(name)
    }

    fn neural(&self, net: &str, input: &[S]) -> Result<Vec<S>, EvalError> {
        self.params.neural(net, input)
    }
}

fn lift<S: Scalar>(v: &Val<f64>) -> Val<S> {
    match v {
        Val::Scalar(x) => Val::Scalar(S::constant(*x)),
        Val::Vector(xs) => Val::Vector(xs.iter().map(|&x| S::constant(x)).collect()),
    }
}

/// Proves goals inside one (partial) world.
struct Prover<'a, 'b, S> {
    ast: &'a ProgramAst,
    params: &'a ParamEnv<'b, S>,
    world: &'a World,
    limit: usize,
    fresh: usize,
    stack: Vec<String>,
}

impl<S: Scalar> Prover<'_, '_, S> {
    fn renamer(&mut self) -> Renamer {
        self.fresh += 1;
        Renamer::new(self.fresh)
    }

    /// Every provable instance of `goal`.
    fn solve(&mut self, goal: &Atom, depth: usize) -> Result<Vec<Atom>, Halt<S>> {
        if depth > self.limit {
            return Err(OracleError::DepthExceeded { limit: self.limit, goal: goal.to_string() }.into());
        }
        if goal.pred == "true" && goal.args.is_empty() {
            return Ok(vec![goal.clone()]);
        }
        let key = goal.is_ground().then(|| goal.to_string());
        if let Some(k) = &key {
            if self.stack.contains(k) {
                return Ok(Vec::new());
            }
            self.stack.push(k.clone());
        }
        let out = self.expand(goal, depth);
        if key.is_some() {
            self.stack.pop();
        }
        out
    }

    fn expand(&mut self, goal: &Atom, depth: usize) -> Result<Vec<Atom>, Halt<S>> {
        let ast = self.ast;
        let mut out: Vec<Atom> = Vec::new();
        let mut add = |a: Atom| {
            if !out.contains(&a) {
                out.push(a);
            }
        };
        for d in ast.dist_facts.iter().filter(|d| d.head.pred == goal.pred) {
            let binding = d.has_binding_position() && d.head.args.len() == goal.args.len();
            if !binding && d.rv_arity() != goal.args.len() {
                continue;
            }
            let d = self.renamer().dist(d);
            let template = d.rv_template();
            let mut s = Subst::new();
            if !s.unify_atoms(goal, if binding { &d.head } else { &template }) {
                continue;
            }
            let rv = s.apply(&template.to_term());
            if !rv.is_ground() {
                return Err(OracleError::NonGround(rv.to_string()).into());
            }
            if binding {
                if s.unify(d.head.args.last().expect("binding position"), &rv) {
                    add(s.apply_atom(goal));
                }
            } else {
                if d.family != Family::Bernoulli {
                    return Err(OracleError::NotBoolean(rv.to_string()).into());
                }
                if self.rv_value(&rv)?.scalar().map_err(|e| OracleError::Eval(rv.to_string(), e))? == 1.0 {
                    add(s.apply_atom(goal));
                }
            }
        }
        for (ci, clause) in ast.clauses.iter().enumerate() {
            if clause.head.pred != goal.pred || clause.head.args.len() != goal.args.len() {
                continue;
            }
            let c = self.renamer().clause(clause);
            let mut s = Subst::new();
            if !s.unify_atoms(goal, &c.head) {
                continue;
            }
            let mut solutions = Vec::new();
            self.body(&c.body, s, depth + 1, &mut solutions)?;
            for s in solutions {
                let inst = s.apply_atom(goal);
                if !inst.is_ground() {
                    return Err(OracleError::NonGround(inst.to_string()).into());
                }
                if let Some(p) = &c.prob {
                    if !self.switch_on(ci, &c, p, &s)? {
                        continue;
                    }
                }
                add(inst);
            }
        }
        Ok(out)
    }

    /// Whether the independent choice behind this clause instance fired.
    fn switch_on(&mut self, ci: usize, c: &Clause, p: &Term, s: &Subst) -> Result<bool, Halt<S>> {
        let args: Vec<Term> = c.vars().iter().map(|v| s.apply(&Term::Var(v.clone()))).collect();
        let name = format!("${}_{ci}", c.head.pred);
        let key = if args.is_empty() { Term::Sym(name) } else { Term::Compound(name, args) }.to_string();
        if let Some(v) = self.world.get(&key) {
            return Ok(matches!(v, Val::Scalar(x) if *x == 1.0));
        }
        let p = s.apply(p);
        if !p.is_ground() {
            return Err(OracleError::NonGround(p.to_string()).into());
        }
        let pv = self.constant(&p, &key)?;
        let dist = resolve(Family::Bernoulli, vec![pv]).map_err(|e| OracleError::Dist(key.clone(), e))?;
        Err(Halt::Need { key, dist, countable: false })
    }

    fn body(&mut self, goals: &[Literal], s: Subst, depth: usize, out: &mut Vec<Subst>) -> Result<(), Halt<S>> {
        let Some((first, rest)) = goals.split_first() else {
            out.push(s);
            return Ok(());
        };
        match first {
            Literal::Pos(a) => {
                let goal = s.apply_atom(a);
                for inst in self.solve(&goal, depth)? {
                    let mut s2 = s.clone();
                    if s2.unify_atoms(&goal, &inst) {
                        self.body(rest, s2, depth, out)?;
                    }
                }
            }
            Literal::Neg(a) => {
                let goal = s.apply_atom(a);
                if !goal.is_ground() {
                    return Err(OracleError::NonGround(format!("\\+ {goal}")).into());
                }
                if self.solve(&goal, depth)?.is_empty() {
                    self.body(rest, s, depth, out)?;
                }
            }
            Literal::Cmp(cmp) => {
                let (l, r) = (s.apply(&cmp.lhs), s.apply(&cmp.rhs));
                let text = format!("{l} {} {r}", cmp.op);
                if !l.is_ground() || !r.is_ground() {
                    return Err(OracleError::NonGround(text).into());
                }
                let scalar = |v: Val<S>| v.scalar().map(S::value).map_err(|e| OracleError::Eval(text.clone(), e));
                let lv = scalar(self.value(&l)?)?;
                let rv = scalar(self.value(&r)?)?;
                if cmp.op.holds(lv - rv) {
                    self.body(rest, s, depth, out)?;
                }
            }
        }
        Ok(())
    }

    /// Numeric value of a ground term in this world.
    fn value(&mut self, t: &Term) -> Result<Val<S>, Halt<S>> {
        let mut refs = Vec::new();
        let e = to_expr(self.ast, t, &mut refs)?;
        let mut rvs = Vec::with_capacity(refs.len());
        for r in &refs {
            rvs.push(lift(&self.rv_value(r)?));
        }
        let env = LocalEnv { params: self.params, rvs };
        eval(&e, &env).map_err(|err| OracleError::Eval(t.to_string(), err).into())
    }

    /// Evaluates a distribution parameter, which must not mention random variables.
    fn constant(&mut self, t: &Term, owner: &str) -> Result<ParamVal<S>, OracleError> {
        let mut refs = Vec::new();
        let e = to_expr(self.ast, t, &mut refs)?;
        if !refs.is_empty() {
            return Err(OracleError::DependentParameters(owner.to_string()));
        }
        let env = LocalEnv { params: self.params, rvs: Vec::new() };
        let val = eval(&e, &env).map_err(|err| OracleError::Eval(t.to_string(), err))?;
        Ok(ParamVal { val, neural: matches!(e, NumExpr::Neural(..)) })
    }

    fn rv_value(&mut self, rv: &Term) -> Result<Val<f64>, Halt<S>> {
        let key = rv.to_string();
        if let Some(v) = self.world.get(&key) {
            return Ok(v.clone());
        }
        let Some((f, n)) = rv.functor() else {
            return Err(OracleError::NotNumeric(key).into());
        };
        let ast = self.ast;
        let mut found = None;
        for d in ast.dist_facts_for(f, n) {
            let d = self.renamer().dist(d);
            let mut s = Subst::new();
            if s.unify(&d.rv_template().to_term(), rv) {
                if found.is_some() {
                    return Err(OracleError::DuplicateRandomVariable(key).into());
                }
                found = Some((d, s));
            }
        }
        let Some((d, s)) = found else {
            return Err(OracleError::NotNumeric(key).into());
        };
        let mut params = Vec::with_capacity(d.params.len());
        for p in &d.params {
            let p = s.apply(p);
            if !p.is_ground() {
                return Err(OracleError::NonGround(format!("{key} ~ {}(.. {p} ..)", d.family.name())).into());
            }
            params.push(self.constant(&p, &key)?);
        }
        let dist = resolve(d.family, params).map_err(|e| OracleError::Dist(key.clone(), e))?;
        Err(Halt::Need { key, dist, countable: d.family.kind() == RvKind::CountableDiscrete })
    }
}

/// Numeric expression for a ground term; random variables become indices
/// into `refs`.
fn to_expr(ast: &ProgramAst, t: &Term, refs: &mut Vec<Term>) -> Result<NumExpr, OracleError> {
    let mut rv = |t: &Term| {
        let i = refs.iter().position(|r| r == t).unwrap_or_else(|| {
            refs.push(t.clone());
            refs.len() - 1
        });
        NumExpr::Rv(i)
    };
    Ok(match t {
        Term::Num(v) => NumExpr::Const(*v),
        Term::Param(p) => NumExpr::Param(p.clone()),
        Term::List(xs) => NumExpr::List(xs.iter().map(|x| to_expr(ast, x, refs)).collect::<Result<_, _>>()?),
        Term::Func(f, xs) => {
            let args = xs.iter().map(|x| to_expr(ast, x, refs)).collect::<Result<_, _>>()?;
            if ast.network(f).is_some() {
                NumExpr::Neural(f.clone(), args)
            } else {
                NumExpr::Call(f.clone(), args)
            }
        }
        Term::Sym(s) if ast.data.iter().any(|d| &d.name == s) => NumExpr::Data(s.clone()),
        Term::Sym(s) if ast.is_rv_functor(s, 0) => rv(t),
        Term::Compound(f, xs) if ast.is_rv_functor(f, xs.len()) => rv(t),
        Term::Var(_) => return Err(OracleError::NonGround(t.to_string())),
        _ => return Err(OracleError::NotNumeric(t.to_string())),
    })
}

/// Why a world enumeration stopped early.
enum Stop {
    Continuous(String),
    Fail(OracleError),
}

impl From<OracleError> for Stop {
    fn from(e: OracleError) -> Self {
        Stop::Fail(e)
    }
}

/// State of one world enumeration.
struct Walk<'a, 'b, S> {
    query: &'a Atom,
    env: &'a ParamEnv<'b, S>,
    /// Reject countably infinite supports instead of truncating them.
    finite: bool,
    visited: usize,
}

/// Brute-force reference evaluator for one program.
pub struct Oracle<'a> {
    ast: &'a ProgramAst,
    ctx: Context<'a>,
    depth_limit: usize,
}

impl<'a> Oracle<'a> {
    pub fn new(ast: &'a ProgramAst, ctx: Context<'a>) -> Self {
        Oracle { ast, ctx, depth_limit: DEFAULT_DEPTH_LIMIT }
    }

    pub fn with_depth_limit(mut self, limit: usize) -> Self {
        self.depth_limit = limit;
        self
    }

    /// Exact probability by summing over every joint assignment of the
    /// query's random variables, which must all have finite supports.
    pub fn enumerate_worlds(&self, query: &Atom) -> Result<f64, OracleError> {
        let env = ParamEnv::new(self.ctx, |_, x| x);
        self.on_big_stack(|| self.enumerate(query, &env, true))
    }

    /// Like [`Oracle::enumerate_worlds`], with Poisson supports truncated
    /// the same way the engine truncates them.
    pub fn discrete_probability(&self, query: &Atom) -> Result<f64, OracleError> {
        let env = ParamEnv::new(self.ctx, |_, x| x);
        self.on_big_stack(|| self.enumerate(query, &env, false))
    }

    /// Exact derivative of a discrete query with respect to every raw
    /// element of one stored parameter, by forward-mode differentiation.
    pub fn discrete_gradient(&self, query: &Atom, name: &str) -> Result<Vec<f64>, OracleError> {
        let len = self.ctx.store.raw(name).map_or(0, |t| t.values.len());
        let mut out = Vec::with_capacity(len);
        for i in 0..len {
            let mut seen = 0;
            let env = ParamEnv::new(self.ctx, |n, x| {
                let hit = n == name && seen == i;
                if n == name {
                    seen += 1;
                }
                Dual { v: x, d: if hit { 1.0 } else { 0.0 } }
            });
            out.push(self.on_big_stack(|| self.enumerate(query, &env, false))?.d);
        }
        Ok(out)
    }

    /// Probability of any query; continuous variables are integrated.
    pub fn probability(&self, query: &Atom, tol: f64) -> Result<Estimate, OracleError> {
        self.on_big_stack(|| self.hybrid(query, tol))
    }

    fn on_big_stack<T: Send>(&self, f: impl FnOnce() -> Result<T, OracleError> + Send) -> Result<T, OracleError> {
        std::thread::scope(|scope| {
            std::thread::Builder::new()
                .stack_size(256 << 20)
                .spawn_scoped(scope, f)
                .expect("spawning oracle thread")
                .join()
                .unwrap_or_else(|e| std::panic::resume_unwind(e))
        })
    }

    fn enumerate<S: Scalar>(&self, query: &Atom, env: &ParamEnv<'_, S>, finite: bool) -> Result<S, OracleError> {
        if !query.is_ground() {
            return Err(OracleError::NonGroundQuery(query.to_string()));
        }
        let mut walk = Walk { query, env, finite, visited: 0 };
        let mut total = S::constant(0.0);
        match self.branch(&mut walk, &mut World::new(), S::constant(1.0), 0, &mut total) {
            Ok(()) => Ok(total),
            Err(Stop::Continuous(key)) => Err(OracleError::Continuous(key)),
            Err(Stop::Fail(e)) => Err(e),
        }
    }

    /// Adds the probability of every completion of `world` where the query holds.
    fn branch<S: Scalar>(
        &self,
        walk: &mut Walk<'_, '_, S>,
        world: &mut World,
        weight: S,
        fixed: usize,
        total: &mut S,
    ) -> Result<(), Stop> {
        walk.visited += 1;
        if walk.visited > MAX_WORLDS {
            return Err(OracleError::TooLarge(format!("more than {MAX_WORLDS} partial worlds")).into());
        }
        let mut prover =
            Prover { ast: self.ast, params: walk.env, world, limit: self.depth_limit, fresh: 0, stack: Vec::new() };
        match prover.solve(walk.query, 0) {
            Ok(answers) => {
                if !answers.is_empty() {
                    *total = *total + weight;
                }
                Ok(())
            }
            Err(Halt::Fail(e)) => Err(e.into()),
            Err(Halt::Need { key, countable: true, .. }) if walk.finite => Err(OracleError::NotFinite(key).into()),
            Err(Halt::Need { key, dist: Resolved::Continuous(_), .. }) => Err(Stop::Continuous(key)),
            Err(Halt::Need { key, dist: Resolved::Discrete(support), .. }) => {
                if fixed == MAX_DISCRETE {
                    return Err(OracleError::TooLarge(format!("more than {MAX_DISCRETE} discrete variables")).into());
                }
                for (x, p) in support {
                    world.insert(key.clone(), Val::Scalar(x));
                    let r = self.branch(walk, world, weight * p, fixed + 1, total);
                    world.remove(&key);
                    r?;
                }
                Ok(())
            }
        }
    }

    fn hybrid(&self, query: &Atom, tol: f64) -> Result<Estimate, OracleError> {
        if !query.is_ground() {
            return Err(OracleError::NonGroundQuery(query.to_string()));
        }
        let env = ParamEnv::new(self.ctx, |_, x| x);
        let mut walk = Walk { query, env: &env, finite: false, visited: 0 };
        let mut acc = Partial::default();
        self.integrate(&mut walk, &mut World::new(), 1.0, 0, 0, tol, &mut acc)?;
        if acc.bound > tol.max(1e-7) * 100.0 {
            return Err(OracleError::NonConvergent(acc.bound));
        }
        Ok(Estimate { value: acc.value, bound: acc.bound, exact: !acc.integrated })
    }

    /// Like `branch`, but a continuous variable is integrated out inside the
    /// partial world that first needs it, so discrete worlds are split once
    /// rather than at every quadrature node.
    #[allow(clippy::too_many_arguments)]
    fn integrate(
        &self,
        walk: &mut Walk<'_, '_, f64>,
        world: &mut World,
        weight: f64,
        fixed: usize,
        width: usize,
        tol: f64,
        acc: &mut Partial,
    ) -> Result<(), OracleError> {
        walk.visited += 1;
        if walk.visited > MAX_WORLDS {
            return Err(OracleError::TooLarge(format!("more than {MAX_WORLDS} partial worlds")));
        }
        let mut prover =
            Prover { ast: self.ast, params: walk.env, world, limit: self.depth_limit, fresh: 0, stack: Vec::new() };
        match prover.solve(walk.query, 0) {
            Ok(answers) => {
                if !answers.is_empty() {
                    acc.value += weight;
                }
                Ok(())
            }
            Err(Halt::Fail(e)) => Err(e),
            Err(Halt::Need { key, dist: Resolved::Discrete(support), .. }) => {
                if fixed == MAX_DISCRETE {
                    return Err(OracleError::TooLarge(format!("more than {MAX_DISCRETE} discrete variables")));
                }
                for (x, p) in support {
                    world.insert(key.clone(), Val::Scalar(x));
                    let r = self.integrate(walk, world, weight * p, fixed + 1, width, tol, acc);
                    world.remove(&key);
                    r?;
                }
                Ok(())
            }
            Err(Halt::Need { key, dist: Resolved::Continuous(dims), .. }) => {
                let width = width + dims.len();
                if width > MAX_CONTINUOUS_DIMS {
                    return Err(OracleError::TooManyContinuous(width));
                }
                let mut inner: f64 = 0.0;
                let (v, e) = integrate_unit(
                    dims.len(),
                    |u: &[f64]| {
                        let xs: Vec<f64> = dims.iter().zip(u).map(|(d, &u)| quantile(d, u)).collect();
                        world.insert(key.clone(), if xs.len() == 1 { Val::Scalar(xs[0]) } else { Val::Vector(xs) });
                        let mut part = Partial::default();
                        let r = self.integrate(walk, world, 1.0, fixed, width, tol, &mut part);
                        world.remove(&key);
                        r?;
                        inner = inner.max(part.bound);
                        Ok(part.value)
                    },
                    tol,
                )?;
                acc.value += weight * v;
                acc.bound += weight * (e + inner);
                acc.integrated = true;
                Ok(())
            }
        }
    }
}

/// Running total of a hybrid walk.
#[derive(Debug, Default)]
struct Partial {
    value: f64,
    bound: f64,
    integrated: bool,
}

/// Inverse CDF of one continuous dimension, clamped away from infinite tails.
pub fn quantile(d: &Dim<f64>, u: f64) -> f64 {
    let u = u.clamp(1e-100, 1.0 - f64::EPSILON / 2.0);
    match d.family {
        Family::Normal => d.a + d.b * Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(u),
        _ => d.reparam(u),
    }
}

/// Probability that a draw from independent `dims` lands in `region`,
/// with an absolute error bound. At most two dimensions.
pub fn quadrature_prob(
    dims: &[Dim<f64>],
    mut region: impl FnMut(&[f64]) -> bool,
    tol: f64,
) -> Result<(f64, f64), OracleError> {
    if dims.len() > MAX_CONTINUOUS_DIMS {
        return Err(OracleError::TooManyContinuous(dims.len()));
    }
    let mut x = vec![0.0; dims.len()];
    let (value, bound) = integrate_unit(
        dims.len(),
        |u: &[f64]| {
            for ((xi, d), &ui) in x.iter_mut().zip(dims).zip(u) {
                *xi = quantile(d, ui);
            }
            Ok::<_, OracleError>(f64::from(region(&x)))
        },
        tol,
    )?;
    if bound > tol.max(1e-7) * 100.0 {
        return Err(OracleError::NonConvergent(bound));
    }
    Ok((value, bound))
}

/// Integrates `f` over the unit cube of dimension `n` (0, 1 or 2).
/// Returns the value and an error bound; the integrand may be discontinuous.
pub fn integrate_unit<E>(n: usize, mut f: impl FnMut(&[f64]) -> Result<f64, E>, tol: f64) -> Result<(f64, f64), E> {
    match n {
        0 => Ok((f(&[])?, 0.0)),
        1 => simpson(&mut |u| f(&[u]), tol),
        2 => {
            let mut inner_bound: f64 = 0.0;
            let (v, b) = simpson(
                &mut |u0| {
                    let (v, b) = simpson(&mut |u1| f(&[u0, u1]), tol)?;
                    inner_bound = inner_bound.max(b);
                    Ok(v)
                },
                tol,
            )?;
            Ok((v, b + inner_bound))
        }
        _ => panic!("integrate_unit supports at most two dimensions"),
    }
}

/// Globally adaptive Simpson over [0, 1]: starting from a fixed grid of
/// panels, the piece with the largest error estimate is halved until the
/// estimates sum to at most `tol`.
fn simpson<E>(f: &mut impl FnMut(f64) -> Result<f64, E>, tol: f64) -> Result<(f64, f64), E> {
    let h = 1.0 / PANELS as f64;
    let mut heap = BinaryHeap::with_capacity(2 * PANELS);
    let mut left = f(0.0)?;
    for i in 0..PANELS {
        let (a, b) = (i as f64 * h, if i + 1 == PANELS { 1.0 } else { (i + 1) as f64 * h });
        let (fm, fb) = (f(0.5 * (a + b))?, f(b)?);
        heap.push(Piece::new(f, [a, b], [left, fm, fb], 0)?);
        left = fb;
    }
    let mut evals = 1 + 4 * PANELS;
    let mut err: f64 = heap.iter().map(|p| p.err).sum();
    let mut settled = Vec::new();
    while err > tol && evals < MAX_EVALS {
        let Some(p) = heap.pop() else { break };
        if p.depth >= MAX_DEPTH {
            settled.push(p);
            continue;
        }
        let m = 0.5 * (p.a + p.b);
        let l = Piece::new(f, [p.a, m], [p.f[0], p.f[1], p.f[2]], p.depth + 1)?;
        let r = Piece::new(f, [m, p.b], [p.f[2], p.f[3], p.f[4]], p.depth + 1)?;
        evals += 4;
        err += l.err + r.err - p.err;
        heap.push(l);
        heap.push(r);
    }
    Ok(heap.iter().chain(&settled).fold((0.0, 0.0), |(v, e), p| (v + p.value, e + p.err)))
}

/// One interval with its five Simpson nodes.
struct Piece {
    a: f64,
    b: f64,
    f: [f64; 5],
    value: f64,
    err: f64,
    depth: usize,
}

impl Piece {
    fn new<E>(
        f: &mut impl FnMut(f64) -> Result<f64, E>,
        [a, b]: [f64; 2],
        [fa, fm, fb]: [f64; 3],
        depth: usize,
    ) -> Result<Piece, E> {
        let m = 0.5 * (a + b);
        let (flm, frm) = (f(0.5 * (a + m))?, f(0.5 * (m + b))?);
        let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        let halves = (b - a) / 12.0 * (fa + 4.0 * flm + 2.0 * fm + 4.0 * frm + fb);
        // No Richardson step: across a jump the error is of the order of the
        // whole difference, not a fifteenth of it.
        Ok(Piece { a, b, f: [fa, flm, fm, frm, fb], value: halves, err: (halves - whole).abs(), depth })
    }
}

impl PartialEq for Piece {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other).is_eq()
    }
}

impl Eq for Piece {}

impl PartialOrd for Piece {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Piece {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.err.total_cmp(&other.err)
    }
}

/// Central finite difference in one raw parameter element. `prob` should
/// use common random numbers (a fixed seed) so both sides share noise.
pub fn fd_gradient<E>(
    store: &ParameterStore,
    name: &str,
    index: usize,
    h: f64,
    mut prob: impl FnMut(&ParameterStore) -> Result<f64, E>,
) -> Result<f64, E> {
    let raw = store.raw(name).expect("parameter exists").values.clone();
    let mut shifted = |delta: f64| {
        let mut s = store.clone();
        let mut v = raw.clone();
        v[index] += delta;
        s.set_raw(name, &v).expect("same shape");
        prob(&s)
    };
    let up = shifted(h)?;
    let down = shifted(-h)?;
    Ok((up - down) / (2.0 * h))
}

#[cfg(test)]
mod tests;
