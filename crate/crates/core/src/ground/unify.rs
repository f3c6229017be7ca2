use std::collections::HashMap;

use crate::syntax::{Atom, Clause, Comparison, DistFact, Literal, Term};

/// Triangular substitution; bindings may point at other bound variables.
#[derive(Debug, Clone, Default)]
pub struct Subst {
    map: HashMap<String, Term>,
}

impl Subst {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bind(&mut self, var: &str, t: Term) {
        self.map.insert(var.to_string(), t);
    }

    fn walk<'a>(&'a self, mut t: &'a Term) -> &'a Term {
        while let Term::Var(v) = t {
            match self.map.get(v) {
                Some(next) => t = next,
                None => break,
            }
        }
        t
    }

    pub fn apply(&self, t: &Term) -> Term {
        match self.walk(t) {
            Term::Compound(f, args) => Term::Compound(f.clone(), args.iter().map(|a| self.apply(a)).collect()),
            Term::Func(f, args) => Term::Func(f.clone(), args.iter().map(|a| self.apply(a)).collect()),
            Term::List(xs) => Term::List(xs.iter().map(|a| self.apply(a)).collect()),
            other => other.clone(),
        }
    }

    pub fn apply_atom(&self, a: &Atom) -> Atom {
        Atom::new(a.pred.clone(), a.args.iter().map(|t| self.apply(t)).collect())
    }

    fn occurs(&self, v: &str, t: &Term) -> bool {
        match self.walk(t) {
            Term::Var(w) => w == v,
            Term::Compound(_, args) | Term::Func(_, args) | Term::List(args) => args.iter().any(|a| self.occurs(v, a)),
            _ => false,
        }
    }

    /// Extends the substitution so that `a` and `b` become equal.
    pub fn unify(&mut self, a: &Term, b: &Term) -> bool {
        let (a, b) = (self.walk(a).clone(), self.walk(b).clone());
        match (&a, &b) {
            (Term::Var(x), Term::Var(y)) if x == y => true,
            (Term::Var(x), t) | (t, Term::Var(x)) => {
                if self.occurs(x, t) {
                    return false;
                }
                self.bind(x, t.clone());
                true
            }
            (Term::Num(x), Term::Num(y)) => x == y,
            (Term::Sym(x), Term::Sym(y)) | (Term::Param(x), Term::Param(y)) => x == y,
            (Term::Compound(f, xs), Term::Compound(g, ys)) | (Term::Func(f, xs), Term::Func(g, ys)) => {
                f == g && self.unify_all(xs, ys)
            }
            (Term::List(xs), Term::List(ys)) => self.unify_all(xs, ys),
            _ => false,
        }
    }

    fn unify_all(&mut self, xs: &[Term], ys: &[Term]) -> bool {
        xs.len() == ys.len() && xs.iter().zip(ys).all(|(x, y)| self.unify(x, y))
    }

    pub fn unify_atoms(&mut self, a: &Atom, b: &Atom) -> bool {
        a.pred == b.pred && self.unify_all(&a.args, &b.args)
    }
}

/// Renames every variable by appending a fresh suffix. `#` cannot occur in
/// source identifiers, so renamed variables never clash with user ones.
pub struct Renamer {
    suffix: String,
}

impl Renamer {
    pub fn new(counter: usize) -> Self {
        Renamer { suffix: format!("#{counter}") }
    }

    pub fn term(&self, t: &Term) -> Term {
        match t {
            Term::Var(v) => Term::Var(format!("{v}{}", self.suffix)),
            Term::Compound(f, args) => Term::Compound(f.clone(), args.iter().map(|a| self.term(a)).collect()),
            Term::Func(f, args) => Term::Func(f.clone(), args.iter().map(|a| self.term(a)).collect()),
            Term::List(xs) => Term::List(xs.iter().map(|a| self.term(a)).collect()),
            other => other.clone(),
        }
    }

    pub fn atom(&self, a: &Atom) -> Atom {
        Atom::new(a.pred.clone(), a.args.iter().map(|t| self.term(t)).collect())
    }

    pub fn clause(&self, c: &Clause) -> Clause {
        Clause {
            head: self.atom(&c.head),
            body: c
                .body
                .iter()
                .map(|l| match l {
                    Literal::Pos(a) => Literal::Pos(self.atom(a)),
                    Literal::Neg(a) => Literal::Neg(self.atom(a)),
                    Literal::Cmp(c) => {
                        Literal::Cmp(Comparison { lhs: self.term(&c.lhs), op: c.op, rhs: self.term(&c.rhs) })
                    }
                })
                .collect(),
            prob: c.prob.as_ref().map(|p| self.term(p)),
        }
    }

    pub fn dist(&self, d: &DistFact) -> DistFact {
        DistFact { head: self.atom(&d.head), family: d.family, params: d.params.iter().map(|p| self.term(p)).collect() }
    }
}
