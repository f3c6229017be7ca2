use super::*;
use crate::syntax::{parse, parse_term};

fn ground(src: &str, query: &str) -> Result<GroundProgram, GroundError> {
    let ast = parse(src).unwrap_or_else(|e| panic!("{e}"));
    let q = Atom::from_term(&parse_term(query).unwrap()).unwrap();
    ground_query(&ast, &q, &GroundOptions::default())
}

fn texts(g: &GroundProgram) -> Vec<Vec<String>> {
    g.formula
        .dnf
        .iter()
        .map(|c| c.iter().map(|l| format!("{}{}", if l.positive { "" } else { "not " }, g.atom_text(l.atom))).collect())
        .collect()
}

const WEATHER: &str = "
    humid(D) ~ bernoulli(0.4).
    temp(D, T) ~ normal(5, 10).
    good_weather(D) :- humid(D) =:= 1, temp(D) < 0.
    good_weather(D) :- humid(D) =:= 0, temp(D) > 15.
";

#[test]
fn weather_has_two_proofs_over_two_variables() {
    let g = ground(WEATHER, "good_weather(d)").unwrap();
    assert_eq!(g.rvs.len(), 2);
    let expect = [["sub(humid(d), 1) =:= 0", "temp(d) < 0"], ["not sub(humid(d), 1) =:= 0", "sub(temp(d), 15) > 0"]];
    assert_eq!(texts(&g), expect);
}

#[test]
fn grounding_is_deterministic() {
    let a = ground(WEATHER, "good_weather(d)").unwrap();
    let b = ground(WEATHER, "good_weather(d)").unwrap();
    assert_eq!(a.formula, b.formula);
    assert_eq!(a.atoms, b.atoms);
    assert_eq!(a.rvs, b.rvs);
}

#[test]
fn plain_fact_is_a_tautology() {
    let g = ground("q.", "q").unwrap();
    assert!(g.formula.is_true());
    assert!(g.atoms.is_empty() && g.rvs.is_empty());
}

#[test]
fn undefined_query_instance_is_false() {
    let g = ground("q(a).", "q(b)").unwrap();
    assert!(g.formula.is_false());
}

#[test]
fn negated_bernoulli() {
    let g = ground("p ~ bernoulli(0.3). q :- \\+ p.", "q").unwrap();
    assert_eq!(g.formula.dnf, vec![vec![Lit::neg(0)]]);
    assert_eq!(g.atom_text(0), "sub(p, 1) =:= 0");
}

#[test]
fn bernoulli_zero_shares_the_atom() {
    let g = ground("p ~ bernoulli(0.3). q :- p =:= 0. q :- p =\\= 1. q :- \\+ p.", "q").unwrap();
    assert_eq!(g.atoms.len(), 1);
    assert_eq!(g.formula.dnf, vec![vec![Lit::neg(0)]]);
}

#[test]
fn operators_are_canonical() {
    let g = ground("x ~ normal(0, 1). q :- x =< 1. q :- x > 1. r :- x >= 2, x =\\= 3.", "q").unwrap();
    assert_eq!(g.atoms.len(), 1);
    assert_eq!(g.formula.dnf, vec![vec![Lit::neg(0)], vec![Lit::pos(0)]]);
    let r = ground("x ~ normal(0, 1). r :- x >= 2, x =\\= 3.", "r").unwrap();
    assert_eq!(texts(&r), vec![vec!["not sub(x, 2) < 0".to_string(), "not sub(x, 3) =:= 0".to_string()]]);
}

#[test]
fn probabilistic_clauses_get_one_choice_per_instance() {
    let src = "0.5 :: coin(X) :- side(X). side(a). side(b). two :- coin(a), coin(b). again :- coin(a), coin(a).";
    let g = ground(src, "two").unwrap();
    assert_eq!(g.rvs.len(), 2);
    assert_eq!(g.formula.dnf.len(), 1);
    assert_eq!(g.formula.dnf[0].len(), 2);
    let g = ground(src, "again").unwrap();
    assert_eq!(g.rvs.len(), 1);
}

#[test]
fn classic_burglary_structure() {
    let src = "
        0.1 :: earthquake. 0.3 :: burglary. 0.9 :: hears.
        0.7 :: alarm :- earthquake.
        0.9 :: alarm :- burglary.
        calls :- alarm, hears.
    ";
    let g = ground(src, "calls").unwrap();
    assert_eq!(g.rvs.len(), 5);
    assert_eq!(g.formula.dnf.len(), 2);
    assert!(g.is_discrete());
}

#[test]
fn cycles_keep_only_acyclic_proofs() {
    let src = "
        0.5 :: edge(a, b). 0.5 :: edge(b, a). 0.5 :: edge(b, c).
        path(X, Y) :- edge(X, Y).
        path(X, Y) :- edge(X, Z), path(Z, Y).
    ";
    let g = ground(src, "path(a, c)").unwrap();
    assert_eq!(g.formula.dnf.len(), 1);
    assert_eq!(g.formula.dnf[0].len(), 2);
    let back = ground(src, "path(b, b)").unwrap();
    assert_eq!(back.formula.dnf.len(), 1);
    assert_eq!(back.formula.dnf[0].len(), 2);
}

#[test]
fn memo_does_not_leak_truncated_results() {
    // path(b, c) is first reached while path(a, c) is in progress; its
    // proof through a must still be found when asked directly afterwards.
    let src = "
        0.5 :: edge(a, b). 0.5 :: edge(b, a). 0.5 :: edge(a, c).
        path(X, Y) :- edge(X, Y).
        path(X, Y) :- edge(X, Z), path(Z, Y).
        both :- path(a, c), path(b, c).
    ";
    let g = ground(src, "both").unwrap();
    assert_eq!(g.rvs.len(), 2);
    assert_eq!(g.formula.dnf.len(), 1);
    assert_eq!(g.formula.dnf[0].len(), 2);
}

#[test]
fn value_binding_position() {
    let src = "temp(D, T) ~ normal(5, 10). hot(D) :- temp(D, T), T > 15.";
    let g = ground(src, "hot(d)").unwrap();
    assert_eq!(texts(&g), vec![vec!["sub(temp(d), 15) > 0".to_string()]]);
    assert_eq!(g.rvs[0].name, "temp(d)");
}

#[test]
fn deterministic_comparisons_fold() {
    assert!(ground("q :- 3 > 2.", "q").unwrap().formula.is_true());
    assert!(ground("q :- add(1, 1) < 2.", "q").unwrap().formula.is_false());
    assert!(ground("q(X) :- X > 2. r :- q(3).", "r").unwrap().formula.is_true());
}

#[test]
fn parametric_comparison_without_variables_is_an_atom() {
    let g = ground("q :- t(a) > 0.5.", "q").unwrap();
    assert_eq!(g.atoms.len(), 1);
    assert!(g.atoms[0].owners.is_empty());
}

#[test]
fn errors() {
    assert!(matches!(ground("nat(0). nat(s(X)) :- nat(X).", "nat(Y)"), Err(GroundError::DepthExceeded { .. })));
    assert!(matches!(
        ground("p(X) :- p(s(X)).", "p(a)"),
        Err(GroundError::DepthExceeded { limit: DEFAULT_DEPTH_LIMIT, .. })
    ));
    assert!(matches!(ground("q(X) :- X > 1.", "q(Y)"), Err(GroundError::UnboundComparison(_))));
    assert!(matches!(ground("p :- \\+ q. q :- \\+ p.", "p"), Err(GroundError::NonStratifiedNegation(_))));
    assert!(matches!(ground("x ~ normal(0, 1). q :- x.", "q"), Err(GroundError::NotBoolean(_))));
    assert!(matches!(
        ground("x ~ normal(0, 1). x ~ normal(1, 1). q :- x > 0.", "q"),
        Err(GroundError::DuplicateRandomVariable(_))
    ));
    assert!(matches!(
        ground("x ~ normal(0, 1). y ~ normal(x, 1). q :- y > 0.", "q"),
        Err(GroundError::DependentParameters(_))
    ));
    assert!(matches!(ground("q :- log(0) > 1.", "q"), Err(GroundError::Eval(..))));
}

#[test]
fn unrelated_non_stratified_part_is_ignored() {
    assert!(ground("p :- \\+ p. q.", "q").unwrap().formula.is_true());
}

#[test]
fn depth_bound_is_monotone() {
    let src = "
        0.5 :: step(0, 1). 0.5 :: step(1, 2). 0.5 :: step(2, 3). 0.5 :: step(3, 4).
        reach(X, X).
        reach(X, Y) :- step(X, Z), reach(Z, Y).
    ";
    let ast = parse(src).unwrap();
    let q = Atom::from_term(&parse_term("reach(0, 4)").unwrap()).unwrap();
    let mut previous: Option<ProofFormula> = None;
    for limit in [2, 4, 6, 8, 16] {
        let result = ground_query(&ast, &q, &GroundOptions { depth_limit: limit });
        match (result, &previous) {
            (Ok(g), Some(p)) => assert!(p.dnf.iter().all(|c| g.formula.dnf.contains(c))),
            (Ok(g), None) => previous = Some(g.formula),
            (Err(GroundError::DepthExceeded { .. }), None) => {}
            (Err(e), Some(_)) => panic!("raising the limit to {limit} failed: {e}"),
            (Err(e), None) => panic!("{e}"),
        }
    }
    assert_eq!(previous.unwrap().dnf.len(), 1);
}

#[test]
fn json_dump_lists_everything() {
    let g = ground(WEATHER, "good_weather(d)").unwrap();
    let j = g.to_json();
    assert_eq!(j["dnf"].as_array().unwrap().len(), 2);
    assert_eq!(j["atoms"].as_array().unwrap().len(), 3);
    assert_eq!(j["random_variables"][1]["family"], "normal");
}
