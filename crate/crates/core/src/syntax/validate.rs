use super::ast::*;
use super::parser::{Item, ItemKind};
use super::{builtin_arity, ParseError, ValidationError};

pub(crate) fn validate(items: Vec<Item>) -> Result<ProgramAst, ParseError> {
    let mut ast = ProgramAst::default();
    let mut positions = Vec::new();
    for item in items {
        let pos = item.pos;
        let dup = |kind: &str, name: &str| {
            Err(ParseError::Validation(ValidationError {
                line: pos.line,
                col: pos.col,
                message: format!("duplicate {kind} `{name}`"),
            }))
        };
        match item.kind {
            ItemKind::Clause(c) => {
                positions.push((Owner::Clause(ast.clauses.len()), pos));
                ast.clauses.push(c);
            }
            ItemKind::Dist(d) => {
                positions.push((Owner::Dist(ast.dist_facts.len()), pos));
                ast.dist_facts.push(d);
            }
            ItemKind::Query(q) => {
                positions.push((Owner::Query(ast.queries.len()), pos));
                ast.queries.push(q);
            }
            ItemKind::Param(p) => {
                if ast.param(&p.name).is_some() {
                    return dup("parameter", &p.name);
                }
                ast.params.push(p);
            }
            ItemKind::Network(n) => {
                if ast.network(&n.name).is_some() || builtin_arity(&n.name).is_some() {
                    return dup("function", &n.name);
                }
                ast.networks.push(n);
            }
            ItemKind::Data(d) => {
                if ast.data.iter().any(|x| x.name == d.name) {
                    return dup("data binding", &d.name);
                }
                ast.data.push(d);
            }
        }
    }

    let nets: Vec<String> = ast.networks.iter().map(|n| n.name.clone()).collect();
    let normalize = |t: &mut Term| normalize_funcs(t, &nets);
    for c in &mut ast.clauses {
        c.head.args.iter_mut().for_each(normalize);
        if let Some(p) = &mut c.prob {
            normalize(p);
        }
        for l in &mut c.body {
            match l {
                Literal::Pos(a) | Literal::Neg(a) => a.args.iter_mut().for_each(normalize),
                Literal::Cmp(cmp) => {
                    normalize(&mut cmp.lhs);
                    normalize(&mut cmp.rhs);
                }
            }
        }
    }
    for d in &mut ast.dist_facts {
        d.head.args.iter_mut().for_each(normalize);
        d.params.iter_mut().for_each(normalize);
    }
    for q in &mut ast.queries {
        q.args.iter_mut().for_each(normalize);
    }

    let checker = Checker { ast: &ast };
    for (owner, pos) in positions {
        checker
            .check(owner)
            .map_err(|message| ParseError::Validation(ValidationError { line: pos.line, col: pos.col, message }))?;
    }
    Ok(ast)
}

/// Rewrites call-shaped compounds naming a builtin or a network into `Func`.
fn normalize_funcs(t: &mut Term, nets: &[String]) {
    match t {
        Term::Compound(f, args) => {
            args.iter_mut().for_each(|a| normalize_funcs(a, nets));
            let is_fn = builtin_arity(f) == Some(args.len()) || nets.iter().any(|n| n == f);
            if is_fn {
                let f = std::mem::take(f);
                let args = std::mem::take(args);
                *t = Term::Func(f, args);
            }
        }
        Term::Func(_, args) | Term::List(args) => args.iter_mut().for_each(|a| normalize_funcs(a, nets)),
        _ => {}
    }
}

#[derive(Clone, Copy)]
enum Owner {
    Clause(usize),
    Dist(usize),
    Query(usize),
}

struct Checker<'a> {
    ast: &'a ProgramAst,
}

impl Checker<'_> {
    fn check(&self, owner: Owner) -> Result<(), String> {
        match owner {
            Owner::Clause(i) => self.clause(&self.ast.clauses[i]),
            Owner::Dist(i) => self.dist(&self.ast.dist_facts[i]),
            Owner::Query(i) => self.query(&self.ast.queries[i]),
        }
    }

    fn clause(&self, c: &Clause) -> Result<(), String> {
        let head = &c.head;
        if matches!(head.pred.as_str(), "query" | "t" | "true") {
            return Err(format!("`{}` is reserved and cannot head a clause", head.pred));
        }
        let arity = head.args.len();
        if self
            .ast
            .dist_facts
            .iter()
            .any(|d| d.head.pred == head.pred && (d.rv_arity() == arity || d.head.args.len() == arity))
        {
            return Err(format!(
                "predicate {}/{} is defined by both a distributional fact and a clause",
                head.pred, arity
            ));
        }
        if let Some(p) = &c.prob {
            self.numeric(p)?;
        }
        let mut bound = Vec::new();
        head.vars_into(&mut bound);
        for l in &c.body {
            if let Literal::Pos(a) = l {
                a.vars_into(&mut bound);
            }
        }
        for l in &c.body {
            let mut vs = Vec::new();
            match l {
                Literal::Pos(_) => continue,
                Literal::Neg(a) => a.vars_into(&mut vs),
                Literal::Cmp(cmp) => {
                    self.numeric(&cmp.lhs)?;
                    self.numeric(&cmp.rhs)?;
                    cmp.lhs.vars_into(&mut vs);
                    cmp.rhs.vars_into(&mut vs);
                }
            }
            if let Some(v) = vs.iter().find(|v| !bound.contains(v)) {
                return Err(format!("variable `{v}` in clause for {}/{} is not range-restricted", head.pred, arity));
            }
        }
        if let Some(p) = &c.prob {
            if let Some(v) = p.vars().iter().find(|v| !bound.contains(v)) {
                return Err(format!("probability variable `{v}` is never bound"));
            }
        }
        Ok(())
    }

    fn dist(&self, d: &DistFact) -> Result<(), String> {
        let family = d.family;
        for p in &d.params {
            self.numeric(p)?;
        }
        let slots = if family == Family::Categorical {
            d.params.len()
        } else {
            let mut n = 0;
            for p in &d.params {
                n += match p {
                    Term::Func(f, _) => self.ast.network(f).map_or(1, NetworkDecl::output_dim),
                    _ => 1,
                };
            }
            n
        };
        if !family.arity().contains(&slots) {
            return Err(format!("{} expects {:?} parameters, got {slots}", family.name(), family.arity()));
        }
        match family {
            Family::Categorical => {
                let width = match &d.params[0] {
                    Term::List(ws) => Some(ws.len()),
                    Term::Func(f, _) => self.ast.network(f).map(NetworkDecl::output_dim),
                    _ => return Err("categorical weights must be a list or a network output".into()),
                };
                if let Some(values) = d.params.get(1) {
                    let Term::List(vs) = values else {
                        return Err("categorical values must be a list of numbers".into());
                    };
                    if !vs.iter().all(|v| matches!(v, Term::Num(_))) {
                        return Err("categorical values must be numeric literals".into());
                    }
                    if width.is_some_and(|w| w != vs.len()) {
                        return Err("categorical weights and values differ in length".into());
                    }
                }
            }
            _ => {
                if family.kind().is_discrete() && d.params.iter().any(|p| matches!(p, Term::List(_))) {
                    return Err(format!("{} does not take vector parameters", family.name()));
                }
            }
        }
        if d.rv_arity() != d.head.args.len() {
            // Value-binding position: the RV term itself must not clash with a second fact.
            let rv = d.rv_template();
            if self
                .ast
                .dist_facts
                .iter()
                .any(|o| !std::ptr::eq(o, d) && o.head.pred == rv.pred && o.head.args.len() == rv.args.len())
            {
                return Err(format!("random variable {}/{} declared twice", rv.pred, rv.args.len()));
            }
        }
        Ok(())
    }

    fn query(&self, q: &Atom) -> Result<(), String> {
        let arity = q.args.len();
        let defined = self.ast.clauses.iter().any(|c| c.head.pred == q.pred && c.head.args.len() == arity)
            || self
                .ast
                .dist_facts
                .iter()
                .any(|d| d.head.pred == q.pred && (d.rv_arity() == arity || d.head.args.len() == arity));
        if defined {
            Ok(())
        } else {
            Err(format!("query predicate {}/{} is not defined", q.pred, arity))
        }
    }

    /// Terms in numeric position must resolve to numbers, parameters,
    /// function calls, or random variables.
    fn numeric(&self, t: &Term) -> Result<(), String> {
        match t {
            Term::Num(_) | Term::Var(_) | Term::Param(_) => Ok(()),
            Term::List(xs) => xs.iter().try_for_each(|x| self.numeric(x)),
            Term::Func(f, args) => {
                if self.ast.network(f).is_some() {
                    // Network inputs are data names, lists or numbers.
                    return Ok(());
                }
                args.iter().try_for_each(|x| self.numeric(x))
            }
            Term::Sym(s) => {
                if self.ast.is_rv_functor(s, 0) || self.ast.data.iter().any(|d| &d.name == s) {
                    Ok(())
                } else {
                    Err(format!("unknown constant `{s}` in numeric expression"))
                }
            }
            Term::Compound(f, args) => {
                if self.ast.is_rv_functor(f, args.len()) {
                    Ok(())
                } else if builtin_arity(f).is_some() {
                    Err(format!("builtin `{f}` called with {} arguments", args.len()))
                } else {
                    Err(format!("unknown function `{f}/{}`", args.len()))
                }
            }
        }
    }
}
