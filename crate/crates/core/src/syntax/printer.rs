use std::fmt::{self, Display, Write};

use super::ast::*;

/// Canonical source text for a program; `parse(&pretty_print(&ast)) == ast`.
pub fn pretty_print(ast: &ProgramAst) -> String {
    let mut out = String::new();
    for p in &ast.params {
        let _ = write!(out, "#param {} = ", p.name);
        if p.init.len() == 1 {
            let _ = write!(out, "{}", p.init[0]);
        } else {
            write_numbers(&mut out, &p.init);
        }
        if p.constraint != Constraint::Real {
            let _ = write!(out, " {}", p.constraint.name());
        }
        out.push('\n');
    }
    for n in &ast.networks {
        let _ = write!(out, "#network {} arch=", n.name);
        let arch: Vec<f64> = n.arch.iter().map(|&w| w as f64).collect();
        write_numbers(&mut out, &arch);
        let _ = writeln!(out, " act={} out={}", n.hidden.name(), n.output.name());
    }
    for d in &ast.data {
        let _ = write!(out, "#data {} = ", d.name);
        match &d.source {
            DataSource::Path(p) => out.push_str(p),
            DataSource::Inline(xs) => write_numbers(&mut out, xs),
        }
        out.push('\n');
    }
    for d in &ast.dist_facts {
        let _ = writeln!(out, "{} ~ {}({}).", d.head, d.family.name(), Joined(&d.params));
    }
    for c in &ast.clauses {
        let _ = writeln!(out, "{c}");
    }
    for q in &ast.queries {
        let _ = writeln!(out, "query({q}).");
    }
    out
}

fn write_numbers(out: &mut String, xs: &[f64]) {
    out.push('[');
    for (i, x) in xs.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        let _ = write!(out, "{x}");
    }
    out.push(']');
}

struct Joined<'a, T>(&'a [T]);

impl<T: Display> Display for Joined<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, x) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{x}")?;
        }
        Ok(())
    }
}

impl Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Var(v) | Term::Sym(v) => f.write_str(v),
            Term::Num(n) => write!(f, "{n}"),
            Term::Param(p) => write!(f, "t({p})"),
            Term::List(xs) => write!(f, "[{}]", Joined(xs)),
            Term::Compound(name, args) | Term::Func(name, args) => {
                write!(f, "{name}({})", Joined(args))
            }
        }
    }
}

impl Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.args.is_empty() {
            f.write_str(&self.pred)
        } else {
            write!(f, "{}({})", self.pred, Joined(&self.args))
        }
    }
}

impl Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.lhs, self.op, self.rhs)
    }
}

impl Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Pos(a) => write!(f, "{a}"),
            Literal::Neg(a) => write!(f, "\\+ {a}"),
            Literal::Cmp(c) => write!(f, "{c}"),
        }
    }
}

impl Display for Clause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(p) = &self.prob {
            write!(f, "{p} :: ")?;
        }
        write!(f, "{}", self.head)?;
        if !self.body.is_empty() {
            write!(f, " :- {}", Joined(&self.body))?;
        }
        f.write_char('.')
    }
}
