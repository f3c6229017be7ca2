//! Query-directed grounding: SLD resolution with negation as failure that
//! turns a query into a disjunction of proofs over comparison atoms.
//!
//! Every random choice ends up as a comparison atom `g ⋈ 0` over ground
//! random variables. Probabilistic clauses `p :: h :- b` get one fresh
//! Bernoulli variable per ground clause instance, and a Bernoulli variable
//! used as a goal stands for `x =:= 1`.

mod expr;
mod formula;
mod unify;

use std::collections::HashMap;

use petgraph::algo::tarjan_scc;
use petgraph::graph::{DiGraph, NodeIndex};
use serde_json::json;
use thiserror::Error;

pub use expr::{eval, Env, EvalError, FixedEnv, NumExpr, Val};
pub use formula::{conjoin, Conj, Lit, ProofFormula};
pub use unify::{Renamer, Subst};

use crate::syntax::{Atom, CmpOp, Family, Literal, ProgramAst, RvKind, Term};

pub const DEFAULT_DEPTH_LIMIT: usize = 512;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GroundError {
    #[error("derivation deeper than {limit} while proving `{goal}`")]
    DepthExceeded { limit: usize, goal: String },
    #[error("comparison `{0}` has an unbound variable")]
    UnboundComparison(String),
    #[error("negation is not stratified: `{0}` depends negatively on itself")]
    NonStratifiedNegation(String),
    #[error("goal `{0}` is not ground where it must be")]
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
}

#[derive(Debug, Clone)]
pub struct GroundOptions {
    pub depth_limit: usize,
}

impl Default for GroundOptions {
    fn default() -> Self {
        GroundOptions { depth_limit: DEFAULT_DEPTH_LIMIT }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundRv {
    pub id: Term,
    pub name: String,
    pub family: Family,
    pub params: Vec<NumExpr>,
    pub kind: RvKind,
}

/// Canonical comparison `g op 0` with `op` one of `<`, `>`, `=:=`; the
/// other three operators are expressed as negated literals.
#[derive(Debug, Clone, PartialEq)]
pub struct PcfAtom {
    pub g: NumExpr,
    pub op: CmpOp,
    /// Sorted indices of the random variables `g` mentions.
    pub owners: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct GroundProgram {
    pub query: Atom,
    pub formula: ProofFormula,
    pub atoms: Vec<PcfAtom>,
    pub rvs: Vec<GroundRv>,
}

impl GroundProgram {
    pub fn rv_names(&self) -> Vec<String> {
        self.rvs.iter().map(|r| r.name.clone()).collect()
    }

    pub fn atom_text(&self, i: usize) -> String {
        let names = self.rv_names();
        let a = &self.atoms[i];
        format!("{} {} 0", a.g.display(&names), a.op)
    }

    pub fn is_discrete(&self) -> bool {
        self.rvs.iter().all(|r| r.kind.is_discrete())
    }

    /// JSON view of the random variables, atoms and proofs.
    pub fn to_json(&self) -> serde_json::Value {
        let names = self.rv_names();
        let rvs: Vec<_> = self
            .rvs
            .iter()
            .map(|r| {
                json!({
                    "id": r.name,
                    "family": r.family.name(),
                    "params": r.params.iter().map(|p| p.display(&names).to_string()).collect::<Vec<_>>(),
                })
            })
            .collect();
        let atoms: Vec<_> = (0..self.atoms.len())
            .map(|i| {
                json!({
                    "id": i,
                    "text": self.atom_text(i),
                    "owners": self.atoms[i].owners.iter().map(|&o| names[o].clone()).collect::<Vec<_>>(),
                })
            })
            .collect();
        let dnf: Vec<Vec<String>> = self
            .formula
            .dnf
            .iter()
            .map(|c| c.iter().map(|l| format!("{}a{}", if l.positive { "" } else { "-" }, l.atom)).collect())
            .collect();
        json!({ "query": self.query.to_string(), "random_variables": rvs, "atoms": atoms, "dnf": dnf })
    }
}

/// Grounds `query` against `ast`. A non-ground query is answered with its
/// first provable instance.
pub fn ground_query(ast: &ProgramAst, query: &Atom, opts: &GroundOptions) -> Result<GroundProgram, GroundError> {
    check_stratified(ast, query)?;
    // Deep derivations recurse deeply; run on a thread with room to spare.
    std::thread::scope(|scope| {
        std::thread::Builder::new()
            .stack_size(256 << 20)
            .spawn_scoped(scope, || Grounder::new(ast, opts).run(query))
            .expect("spawning grounding thread")
            .join()
            .unwrap_or_else(|e| std::panic::resume_unwind(e))
    })
}

fn check_stratified(ast: &ProgramAst, query: &Atom) -> Result<(), GroundError> {
    let mut graph: DiGraph<(String, usize), bool> = DiGraph::new();
    let mut nodes: HashMap<(String, usize), NodeIndex> = HashMap::new();
    let mut node = |g: &mut DiGraph<_, _>, k: (String, usize)| *nodes.entry(k.clone()).or_insert_with(|| g.add_node(k));
    for c in &ast.clauses {
        let h = node(&mut graph, c.head.key());
        for l in &c.body {
            match l {
                Literal::Pos(a) => {
                    let b = node(&mut graph, a.key());
                    graph.add_edge(h, b, false);
                }
                Literal::Neg(a) => {
                    let b = node(&mut graph, a.key());
                    graph.add_edge(h, b, true);
                }
                Literal::Cmp(_) => {}
            }
        }
    }
    let Some(&start) = nodes.get(&query.key()) else { return Ok(()) };
    let mut reachable = vec![false; graph.node_count()];
    let mut dfs = petgraph::visit::Dfs::new(&graph, start);
    while let Some(n) = dfs.next(&graph) {
        reachable[n.index()] = true;
    }
    let mut component = vec![0; graph.node_count()];
    for (i, scc) in tarjan_scc(&graph).into_iter().enumerate() {
        for n in scc {
            component[n.index()] = i;
        }
    }
    for e in graph.edge_indices() {
        let (a, b) = graph.edge_endpoints(e).unwrap();
        if graph[e] && reachable[a.index()] && component[a.index()] == component[b.index()] {
            let (name, arity) = &graph[a];
            return Err(GroundError::NonStratifiedNegation(format!("{name}/{arity}")));
        }
    }
    Ok(())
}

type Answers = Vec<(Atom, Vec<Conj>)>;

fn add_answer(answers: &mut Answers, inst: Atom, conj: Conj) {
    match answers.iter_mut().find(|(a, _)| *a == inst) {
        Some((_, dnf)) => {
            if !dnf.contains(&conj) {
                dnf.push(conj);
            }
        }
        None => answers.push((inst, vec![conj])),
    }
}

enum Outcome {
    Fixed(bool),
    Lit(Lit),
}

fn is_constant(e: &NumExpr) -> bool {
    match e {
        NumExpr::Const(_) => true,
        NumExpr::List(xs) | NumExpr::Call(_, xs) => xs.iter().all(is_constant),
        _ => false,
    }
}

struct Grounder<'a> {
    ast: &'a ProgramAst,
    limit: usize,
    fresh: usize,
    rvs: Vec<GroundRv>,
    rv_index: HashMap<String, usize>,
    atoms: Vec<PcfAtom>,
    atom_index: HashMap<String, usize>,
    memo: HashMap<String, Vec<Conj>>,
    stack: Vec<String>,
    /// Lowest in-progress stack position hit since the current frame began.
    low: usize,
}

impl<'a> Grounder<'a> {
    fn new(ast: &'a ProgramAst, opts: &GroundOptions) -> Self {
        Grounder {
            ast,
            limit: opts.depth_limit,
            fresh: 0,
            rvs: Vec::new(),
            rv_index: HashMap::new(),
            atoms: Vec::new(),
            atom_index: HashMap::new(),
            memo: HashMap::new(),
            stack: Vec::new(),
            low: usize::MAX,
        }
    }

    fn run(mut self, query: &Atom) -> Result<GroundProgram, GroundError> {
        let answers = self.solve_atom(query, 0)?;
        let (inst, dnf) = answers.into_iter().next().unwrap_or_else(|| (query.clone(), Vec::new()));
        let mut formula = ProofFormula::falsum();
        for c in dnf {
            formula.push(c);
        }
        Ok(self.compact(inst, formula))
    }

    /// Keeps only atoms the formula mentions and the variables they use.
    fn compact(self, query: Atom, mut formula: ProofFormula) -> GroundProgram {
        let used = formula.atoms();
        let mut atom_map = vec![usize::MAX; self.atoms.len()];
        let mut keep: Vec<usize> = (0..self.atoms.len()).filter(|i| used.contains(i)).collect();
        keep.sort_unstable();
        for (new, &old) in keep.iter().enumerate() {
            atom_map[old] = new;
        }
        let mut rv_used = vec![false; self.rvs.len()];
        for &i in &keep {
            for &o in &self.atoms[i].owners {
                rv_used[o] = true;
            }
        }
        let mut rv_map = vec![usize::MAX; self.rvs.len()];
        let mut rvs = Vec::new();
        for (i, rv) in self.rvs.into_iter().enumerate() {
            if rv_used[i] {
                rv_map[i] = rvs.len();
                rvs.push(rv);
            }
        }
        let atoms = keep
            .iter()
            .map(|&i| {
                let mut a = self.atoms[i].clone();
                a.g.remap_rvs(&rv_map);
                a.owners.iter_mut().for_each(|o| *o = rv_map[*o]);
                a.owners.sort_unstable();
                a
            })
            .collect();
        formula.remap_atoms(&atom_map);
        GroundProgram { query, formula, atoms, rvs }
    }

    fn renamer(&mut self) -> Renamer {
        self.fresh += 1;
        Renamer::new(self.fresh)
    }

    fn solve_atom(&mut self, goal: &Atom, depth: usize) -> Result<Answers, GroundError> {
        if depth > self.limit {
            return Err(GroundError::DepthExceeded { limit: self.limit, goal: goal.to_string() });
        }
        if goal.pred == "true" && goal.args.is_empty() {
            return Ok(vec![(goal.clone(), vec![Vec::new()])]);
        }
        let key = goal.is_ground().then(|| goal.to_string());
        if let Some(k) = &key {
            if let Some(dnf) = self.memo.get(k) {
                return Ok(vec![(goal.clone(), dnf.clone())]);
            }
            if let Some(pos) = self.stack.iter().position(|s| s == k) {
                // Cyclic call: any proof through here is not minimal.
                self.low = self.low.min(pos);
                return Ok(Vec::new());
            }
        }
        let frame = self.stack.len();
        let saved = self.low;
        self.low = usize::MAX;
        if let Some(k) = &key {
            self.stack.push(k.clone());
        }
        let result = self.expand(goal, depth);
        if key.is_some() {
            self.stack.pop();
        }
        let hit = self.low;
        self.low = saved.min(if hit < frame { hit } else { usize::MAX });
        let answers = result?;
        if let Some(k) = key {
            if hit >= frame {
                let dnf = answers.first().map(|(_, d)| d.clone()).unwrap_or_default();
                self.memo.insert(k, dnf);
            }
        }
        Ok(answers)
    }

    fn expand(&mut self, goal: &Atom, depth: usize) -> Result<Answers, GroundError> {
        let ast = self.ast;
        let mut answers = Answers::new();
        for d in ast.dist_facts.iter().filter(|d| d.head.pred == goal.pred) {
            let binding = d.has_binding_position() && d.head.args.len() == goal.args.len();
            if !binding && d.rv_arity() != goal.args.len() {
                continue;
            }
            let d = self.renamer().dist(d);
            let mut s = Subst::new();
            let template = d.rv_template();
            let target = if binding { &d.head } else { &template };
            if !s.unify_atoms(goal, target) {
                continue;
            }
            let rv = s.apply(&template.to_term());
            if !rv.is_ground() {
                return Err(GroundError::NonGround(rv.to_string()));
            }
            let index = self.rv(&rv)?;
            if binding {
                if !s.unify(d.head.args.last().unwrap(), &rv) {
                    continue;
                }
                add_answer(&mut answers, s.apply_atom(goal), Vec::new());
            } else {
                if self.rvs[index].family != Family::Bernoulli {
                    return Err(GroundError::NotBoolean(rv.to_string()));
                }
                let lit =
                    self.intern(NumExpr::Call("sub".into(), vec![NumExpr::Rv(index), NumExpr::Const(1.0)]), CmpOp::Eq);
                add_answer(&mut answers, s.apply_atom(goal), vec![Lit::pos(lit)]);
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
            let mut proofs = Vec::new();
            self.solve_body(&c.body, s, Vec::new(), depth + 1, &mut proofs)?;
            for (s, conj) in proofs {
                let inst = s.apply_atom(goal);
                if !inst.is_ground() {
                    return Err(GroundError::NonGround(inst.to_string()));
                }
                let conj = match &c.prob {
                    None => conj,
                    Some(p) => {
                        let choice = self.clause_choice(ci, &c, p, &s)?;
                        conjoin(&conj, &[Lit::pos(choice)]).expect("fresh choice literal")
                    }
                };
                add_answer(&mut answers, inst, conj);
            }
        }
        Ok(answers)
    }

    /// Bernoulli choice atom for one ground instance of a probabilistic clause.
    fn clause_choice(
        &mut self,
        ci: usize,
        c: &crate::syntax::Clause,
        p: &Term,
        s: &Subst,
    ) -> Result<usize, GroundError> {
        let args: Vec<Term> = c.vars().iter().map(|v| s.apply(&Term::Var(v.clone()))).collect();
        let name = format!("${}_{ci}", c.head.pred);
        let id = if args.is_empty() { Term::Sym(name) } else { Term::Compound(name, args) };
        let key = id.to_string();
        let index = match self.rv_index.get(&key) {
            Some(&i) => i,
            None => {
                let p = s.apply(p);
                if !p.is_ground() {
                    return Err(GroundError::NonGround(p.to_string()));
                }
                let prob = self.numeric(&p)?;
                let mut deps = Vec::new();
                prob.rvs_into(&mut deps);
                if !deps.is_empty() {
                    return Err(GroundError::DependentParameters(key));
                }
                self.push_rv(GroundRv {
                    id,
                    name: key,
                    family: Family::Bernoulli,
                    params: vec![prob],
                    kind: RvKind::FiniteDiscrete,
                })
            }
        };
        Ok(self.intern(NumExpr::Call("sub".into(), vec![NumExpr::Rv(index), NumExpr::Const(1.0)]), CmpOp::Eq))
    }

    fn solve_body(
        &mut self,
        goals: &[Literal],
        s: Subst,
        conj: Conj,
        depth: usize,
        out: &mut Vec<(Subst, Conj)>,
    ) -> Result<(), GroundError> {
        let Some((first, rest)) = goals.split_first() else {
            out.push((s, conj));
            return Ok(());
        };
        match first {
            Literal::Pos(a) => {
                let goal = s.apply_atom(a);
                for (inst, dnf) in self.solve_atom(&goal, depth)? {
                    let mut s2 = s.clone();
                    if !s2.unify_atoms(&goal, &inst) {
                        continue;
                    }
                    for c in &dnf {
                        if let Some(c2) = conjoin(&conj, c) {
                            self.solve_body(rest, s2.clone(), c2, depth, out)?;
                        }
                    }
                }
            }
            Literal::Neg(a) => {
                let goal = s.apply_atom(a);
                if !goal.is_ground() {
                    return Err(GroundError::NonGround(format!("\\+ {goal}")));
                }
                let mut inner = ProofFormula::falsum();
                for (_, dnf) in self.solve_atom(&goal, depth)? {
                    dnf.into_iter().for_each(|c| inner.push(c));
                }
                for c in inner.negate().dnf {
                    if let Some(c2) = conjoin(&conj, &c) {
                        self.solve_body(rest, s.clone(), c2, depth, out)?;
                    }
                }
            }
            Literal::Cmp(cmp) => {
                let (lhs, rhs) = (s.apply(&cmp.lhs), s.apply(&cmp.rhs));
                match self.comparison(&lhs, cmp.op, &rhs)? {
                    Outcome::Fixed(false) => {}
                    Outcome::Fixed(true) => self.solve_body(rest, s, conj, depth, out)?,
                    Outcome::Lit(l) => {
                        if let Some(c2) = conjoin(&conj, &[l]) {
                            self.solve_body(rest, s, c2, depth, out)?;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn comparison(&mut self, lhs: &Term, op: CmpOp, rhs: &Term) -> Result<Outcome, GroundError> {
        let text = || format!("{lhs} {op} {rhs}");
        if !lhs.is_ground() || !rhs.is_ground() {
            return Err(GroundError::UnboundComparison(text()));
        }
        let l = self.numeric(lhs)?;
        let r = self.numeric(rhs)?;
        let mut g = if r == NumExpr::Const(0.0) { l } else { NumExpr::Call("sub".into(), vec![l, r]) };
        if is_constant(&g) {
            let v = eval(&g, &FixedEnv::default()).and_then(Val::scalar).map_err(|e| GroundError::Eval(text(), e))?;
            return Ok(Outcome::Fixed(op.holds(v)));
        }
        let (op, mut positive) = match op {
            CmpOp::Le => (CmpOp::Gt, false),
            CmpOp::Ge => (CmpOp::Lt, false),
            CmpOp::Ne => (CmpOp::Eq, false),
            other => (other, true),
        };
        if op == CmpOp::Eq {
            if let NumExpr::Rv(i) = g {
                if self.rvs[i].family == Family::Bernoulli {
                    // x =:= 0 is the complement of x =:= 1.
                    g = NumExpr::Call("sub".into(), vec![NumExpr::Rv(i), NumExpr::Const(1.0)]);
                    positive = !positive;
                }
            }
        }
        let atom = self.intern(g, op);
        Ok(Outcome::Lit(Lit { atom, positive }))
    }

    fn intern(&mut self, g: NumExpr, op: CmpOp) -> usize {
        let key = format!("{g:?} {op}");
        if let Some(&i) = self.atom_index.get(&key) {
            return i;
        }
        let mut owners = Vec::new();
        g.rvs_into(&mut owners);
        owners.sort_unstable();
        self.atoms.push(PcfAtom { g, op, owners });
        self.atom_index.insert(key, self.atoms.len() - 1);
        self.atoms.len() - 1
    }

    fn numeric(&mut self, t: &Term) -> Result<NumExpr, GroundError> {
        let ast = self.ast;
        Ok(match t {
            Term::Num(v) => NumExpr::Const(*v),
            Term::Var(_) => return Err(GroundError::UnboundComparison(t.to_string())),
            Term::Param(p) => NumExpr::Param(p.clone()),
            Term::List(xs) => NumExpr::List(xs.iter().map(|x| self.numeric(x)).collect::<Result<_, _>>()?),
            Term::Func(f, args) => {
                let args = args.iter().map(|x| self.numeric(x)).collect::<Result<_, _>>()?;
                if ast.network(f).is_some() {
                    NumExpr::Neural(f.clone(), args)
                } else {
                    NumExpr::Call(f.clone(), args)
                }
            }
            Term::Sym(s) if ast.data.iter().any(|d| &d.name == s) => NumExpr::Data(s.clone()),
            Term::Sym(s) if ast.is_rv_functor(s, 0) => NumExpr::Rv(self.rv(t)?),
            Term::Compound(f, args) if ast.is_rv_functor(f, args.len()) => NumExpr::Rv(self.rv(t)?),
            _ => return Err(GroundError::NotNumeric(t.to_string())),
        })
    }

    fn push_rv(&mut self, rv: GroundRv) -> usize {
        self.rv_index.insert(rv.name.clone(), self.rvs.len());
        self.rvs.push(rv);
        self.rvs.len() - 1
    }

    /// Index of the ground random variable `term`, registering it on first use.
    fn rv(&mut self, term: &Term) -> Result<usize, GroundError> {
        let key = term.to_string();
        if let Some(&i) = self.rv_index.get(&key) {
            return Ok(i);
        }
        let Some((f, n)) = term.functor() else {
            return Err(GroundError::NotNumeric(key));
        };
        let ast = self.ast;
        let mut found = None;
        for d in ast.dist_facts_for(f, n) {
            let d = self.renamer().dist(d);
            let mut s = Subst::new();
            if s.unify(&d.rv_template().to_term(), term) {
                if found.is_some() {
                    return Err(GroundError::DuplicateRandomVariable(key));
                }
                found = Some((d, s));
            }
        }
        let Some((d, s)) = found else {
            return Err(GroundError::NotNumeric(key));
        };
        let mut params = Vec::with_capacity(d.params.len());
        for p in &d.params {
            let p = s.apply(p);
            if !p.is_ground() {
                return Err(GroundError::NonGround(format!("{key} ~ {}(.. {p} ..)", d.family.name())));
            }
            let e = self.numeric(&p)?;
            let mut deps = Vec::new();
            e.rvs_into(&mut deps);
            if !deps.is_empty() {
                return Err(GroundError::DependentParameters(key));
            }
            params.push(e);
        }
        Ok(self.push_rv(GroundRv { id: term.clone(), name: key, family: d.family, params, kind: d.family.kind() }))
    }
}

#[cfg(test)]
mod tests;
