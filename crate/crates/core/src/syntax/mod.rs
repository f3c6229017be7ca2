//! `.dspl` source language: AST, parser, validation and canonical printing.
//!
//! Grammar summary:
//!
//! ```text
//! x ~ normal(0, 1).                         distributional fact
//! temp(D, T) ~ normal(t(mu), t(sigma)).     trailing T is a value-binding position
//! 0.3 :: p.                                 annotated fact (fresh Bernoulli choice)
//! 0.9 :: alarm :- burglary.                 annotated rule
//! q(X) :- r(X), \+ s(X), temp(X) > 15.      rule with negation and comparison
//! query(q(a)).
//! #param mu = 0.0 [real|positive|unit]
//! #network net arch=[2,8,1] act=relu out=sigmoid
//! #data img = [0.1, 0.2]                    or  #data img = path/to/file.json
//! ```
//!
//! Comments start with `%`.

mod ast;
mod lexer;
mod parser;
mod printer;
mod validate;

pub use ast::*;
pub use parser::{parse, parse_term};
pub use printer::pretty_print;

use thiserror::Error;

/// Registered numeric builtins and their arities.
pub const BUILTINS: &[(&str, usize)] = &[
    ("add", 2),
    ("sub", 2),
    ("mul", 2),
    ("div", 2),
    ("neg", 1),
    ("abs", 1),
    ("squared_distance", 2),
    ("distance", 2),
    ("exp", 1),
    ("log", 1),
];

pub fn builtin_arity(name: &str) -> Option<usize> {
    BUILTINS.iter().find(|(n, _)| *n == name).map(|&(_, a)| a)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{line}:{col}: {message}")]
pub struct SyntaxError {
    pub line: usize,
    pub col: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{line}:{col}: {message}")]
pub struct ValidationError {
    pub line: usize,
    pub col: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("syntax error at {0}")]
    Syntax(#[from] SyntaxError),
    #[error("invalid program at {0}")]
    Validation(#[from] ValidationError),
}

impl ParseError {
    pub fn position(&self) -> (usize, usize) {
        match self {
            ParseError::Syntax(e) => (e.line, e.col),
            ParseError::Validation(e) => (e.line, e.col),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ok(src: &str) -> ProgramAst {
        parse(src).unwrap_or_else(|e| panic!("{src}: {e}"))
    }

    #[test]
    fn poisson_fact() {
        let ast = ok("x ~ poisson(2.0).");
        assert_eq!(ast.dist_facts.len(), 1);
        let d = &ast.dist_facts[0];
        assert_eq!(d.family, Family::Poisson);
        assert_eq!(d.params, vec![Term::Num(2.0)]);
        assert_eq!(d.head, Atom::new("x", vec![]));
    }

    #[test]
    fn weather_rules() {
        let src = "
            #network humid_detector arch=[2,1] out=sigmoid
            #network temperature_predictor arch=[2,2]
            humid(Data) ~ bernoulli(humid_detector(Data)).
            temp(Data, T) ~ normal(temperature_predictor(Data)).
            good_weather(Data) :- humid(Data) =:= 1, temp(Data) < 0.
            good_weather(Data) :- humid(Data) =:= 0, temp(Data) > 15.
        ";
        let ast = ok(src);
        assert_eq!(ast.clauses.len(), 2);
        for c in &ast.clauses {
            let ops: Vec<CmpOp> = c
                .body
                .iter()
                .map(|l| match l {
                    Literal::Cmp(c) => c.op,
                    other => panic!("unexpected literal {other:?}"),
                })
                .collect();
            assert_eq!(ops[0], CmpOp::Eq);
            assert!(matches!(ops[1], CmpOp::Lt | CmpOp::Gt));
        }
        let temp = &ast.dist_facts[1];
        assert!(temp.has_binding_position());
        assert_eq!(temp.rv_arity(), 1);
    }

    #[test]
    fn missing_period_reports_end_of_input() {
        let err = parse("q :- p").unwrap_err();
        let ParseError::Syntax(e) = err else { panic!("{err:?}") };
        assert_eq!((e.line, e.col), (1, 7));
        assert!(e.message.contains("end of input"), "{}", e.message);
    }

    #[test]
    fn canonical_printing() {
        assert_eq!(pretty_print(&ok("x ~ normal(0,1).")), "x ~ normal(0, 1).\n");
        assert_eq!(pretty_print(&ProgramAst::default()), "");
        let text = pretty_print(&ok("y ~ normal(t(mu), 1)."));
        assert!(text.contains("t(mu)"), "{text}");
    }

    #[test]
    fn infix_arithmetic_desugars_to_builtins() {
        let ast = ok("x ~ normal(0, 1). q :- x + 2 * 3 > -1.");
        let Literal::Cmp(c) = &ast.clauses[0].body[0] else { panic!() };
        assert_eq!(
            c.lhs,
            Term::Func(
                "add".into(),
                vec![Term::Sym("x".into()), Term::Func("mul".into(), vec![Term::Num(2.0), Term::Num(3.0)])]
            )
        );
        assert_eq!(c.rhs, Term::Num(-1.0));
    }

    #[test]
    fn annotations_and_directives_round_trip() {
        let src = "
            #param p = 0.5 unit
            #param mu = [1, 2]
            #network net arch=[3, 4, 2] act=tanh out=softmax
            #data img = [0.5, 1.5, -2]
            #data other = inputs/img.json
            c(Im, C) ~ categorical(net(Im), [0, 1]).
            0.3 :: burglary.
            t(p) :: alarm :- burglary.
            calls :- alarm, \\+ quiet, c(img, C), C =:= 1.
            quiet :- true.
            query(calls).
        ";
        let ast = ok(src);
        assert_eq!(ast.params[0].constraint, Constraint::Unit);
        assert_eq!(ast.networks[0].arch, vec![3, 4, 2]);
        assert_eq!(ast.data[1].source, DataSource::Path("inputs/img.json".into()));
        assert_eq!(ok(&pretty_print(&ast)), ast);
    }

    #[test]
    fn validation_errors() {
        let cases = [
            ("x ~ gamma(1, 2).", "unknown distribution family"),
            ("x ~ normal(1).", "expects"),
            ("x ~ bernoulli(0.1, 0.2).", "expects"),
            ("x ~ normal(0, 1). q :- Y > x.", "range-restricted"),
            ("q :- \\+ r(Z).", "range-restricted"),
            ("p ~ bernoulli(0.5). p :- true.", "both"),
            ("q :- r. query(s).", "not defined"),
            ("x ~ normal(foo(1), 1).", "unknown function"),
            ("x ~ normal(0, 1). q :- x > bar.", "unknown constant"),
            ("x ~ normal(t(_), 1).", "anonymous"),
            ("#param a = 1\n#param a = 2\n", "duplicate"),
            ("#network n arch=[3]\n", "at least two"),
            ("q :- x =< 1 <= 2.", "expected"),
        ];
        for (src, needle) in cases {
            let err = parse(src).expect_err(src).to_string();
            assert!(err.contains(needle), "{src}: {err}");
        }
    }

    #[test]
    fn anonymous_variables_are_distinct() {
        let ast = ok("p(a, b). q :- p(_, _).");
        let Literal::Pos(a) = &ast.clauses[1].body[0] else { panic!() };
        assert_ne!(a.args[0], a.args[1]);
    }

    #[test]
    fn parse_is_deterministic() {
        let src = "0.1 :: e. 0.3 :: b. 0.7 :: a :- e. 0.9 :: a :- b. c :- a.";
        assert_eq!(ok(src), ok(src));
    }
}
