use proptest::prelude::*;

use super::*;
use crate::autodiff::{ParameterStore, Tensor};
use crate::ground::{ground_query, GroundOptions};
use crate::oracle::{fd_gradient, Oracle};
use crate::syntax::{parse, parse_term, Atom, Constraint, ProgramAst};
use crate::wmi::{infer, Coolness, Mode};

fn atom(s: &str) -> Atom {
    Atom::from_term(&parse_term(s).unwrap()).unwrap()
}

fn plan(ast: &ProgramAst, query: &str) -> Plan {
    Plan::new(ground_query(ast, &atom(query), &GroundOptions::default()).unwrap()).unwrap()
}

fn store(entries: &[(&str, f64, Constraint)]) -> ParameterStore {
    let mut s = ParameterStore::new();
    for &(name, v, c) in entries {
        s.insert(name, Tensor::scalar(v), c).unwrap();
    }
    s
}

fn soft(n: usize, seed: u64, beta: f64) -> InferenceConfig {
    InferenceConfig { n_samples: n, seed, mode: Mode::Soft, coolness: Coolness::global(beta) }
}

#[test]
fn relax_examples() {
    assert_eq!(relax(0.0, CmpOp::Gt, 10.0, 10.0), 0.5);
    assert_eq!(relax(0.0, CmpOp::Lt, 10.0, 10.0), 0.5);
    assert_eq!(relax(0.0, CmpOp::Eq, 10.0, 10.0), 0.25);
    assert_eq!(relax(0.0, CmpOp::Ne, 10.0, 10.0), 0.75);
    assert!((relax(0.1, CmpOp::Gt, 50.0, 50.0) - 0.993307).abs() < 1e-6);
    assert!((relax(0.1, CmpOp::Le, 50.0, 50.0) - (1.0 - 0.993307)).abs() < 1e-6);
}

proptest! {
    #[test]
    fn relaxation_approaches_the_indicator(g in prop_oneof![-5.0f64..-1e-3, 1e-3f64..5.0], beta in 1.0f64..500.0) {
        let bound = (-beta * g.abs() / 2.0).exp();
        for op in CmpOp::ALL {
            let hard = f64::from(op.holds(g));
            let r = relax(g, op, beta, beta);
            prop_assert!((0.0..=1.0).contains(&r));
            prop_assert!((r - hard).abs() <= bound, "{op} at {g}, beta {beta}: {r}");
        }
    }

    #[test]
    fn relaxation_is_monotone_in_g(a in -3.0f64..3.0, b in -3.0f64..3.0, beta in 0.5f64..50.0) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(relax(lo, CmpOp::Gt, beta, beta) <= relax(hi, CmpOp::Gt, beta, beta));
        prop_assert!(relax(lo, CmpOp::Lt, beta, beta) >= relax(hi, CmpOp::Lt, beta, beta));
    }
}

#[test]
fn schedules() {
    let c = Schedule::parse("constant:50").unwrap();
    assert_eq!((c.anneal(0), c.anneal(99)), (50.0, 50.0));
    assert_eq!(Schedule::parse("linear:5:1").unwrap().anneal(2), 7.0);
    assert_eq!(Schedule::parse("exponential:1:2").unwrap().anneal(3), 8.0);
    for s in ["constant:50", "linear:5:1", "exponential:1.5:2"] {
        assert_eq!(Schedule::parse(s).unwrap().to_string(), s);
    }
    for bad in ["constant", "constant:-1", "linear:1:-1", "exponential:1:0.5", "cosine:1", "linear:x:1"] {
        assert!(Schedule::parse(bad).is_err(), "{bad}");
    }
}

#[test]
fn gradient_of_a_gaussian_tail() {
    let ast = parse("x ~ normal(t(mu), 1). q :- x < 0.").unwrap();
    let s = store(&[("mu", 0.0, Constraint::Real)]);
    let data = BTreeMap::new();
    let ctx = Context { store: &s, networks: &[], data: &data };
    let pdf0 = 0.398942;
    let n = 100_000;
    for beta in [20.0, 1000.0] {
        let (r, g) = grad_query(&plan(&ast, "q"), ctx, &soft(n, 0, beta)).unwrap();
        assert!((r.estimate - 0.5).abs() < 0.01);
        // Each sample contributes -beta s(1 - s) at s = sigmoid(-beta x), whose
        // second moment is close to beta pdf(0) / 6.
        let sd = (beta * pdf0 / 6.0 / n as f64).sqrt();
        let tol = (4.0 * sd).max(0.02);
        // d/dmu P(x < 0) = -pdf(0).
        assert!((g["mu"][0] + pdf0).abs() < tol, "beta {beta}: {} (tolerance {tol})", g["mu"][0]);
    }
}

#[test]
fn discrete_gradient_is_exact() {
    let src = "
        t(e) :: earthquake. t(b) :: burglary. 0.9 :: hears.
        0.7 :: alarm :- earthquake.
        0.9 :: alarm :- burglary.
        calls :- alarm, hears.
    ";
    let ast = parse(src).unwrap();
    let s = store(&[("e", 0.1, Constraint::Unit), ("b", 0.3, Constraint::Unit)]);
    let data = BTreeMap::new();
    let ctx = Context { store: &s, networks: &[], data: &data };
    let (r, g) = grad_query(&plan(&ast, "calls"), ctx, &soft(100, 0, 50.0)).unwrap();
    assert!(r.exact && (r.estimate - 0.28899).abs() < 1e-12);
    let o = Oracle::new(&ast, ctx);
    for name in ["e", "b"] {
        let expect = o.discrete_gradient(&atom("calls"), name).unwrap()[0];
        assert!((g[name][0] - expect).abs() < 1e-9, "{name}: {} vs {expect}", g[name][0]);
    }
}

#[test]
fn unrelated_parameters_get_zero_gradient() {
    let ast = parse("x ~ normal(t(mu), 1). q. r :- x > 0.").unwrap();
    let s = store(&[("mu", 0.5, Constraint::Real), ("unused", 2.0, Constraint::Positive)]);
    let data = BTreeMap::new();
    let ctx = Context { store: &s, networks: &[], data: &data };
    let (r, g) = grad_query(&plan(&ast, "q"), ctx, &soft(1000, 0, 10.0)).unwrap();
    assert_eq!(r.estimate, 1.0);
    assert_eq!(g.len(), 2);
    assert!(g.values().flatten().all(|&d| d == 0.0));
    let (_, g) = grad_query(&plan(&ast, "r"), ctx, &soft(1000, 0, 10.0)).unwrap();
    assert_eq!(g["unused"], vec![0.0]);
    assert!(g["mu"][0] > 0.0);
}

#[test]
fn forward_value_matches_inference() {
    let src = "
        humid(D) ~ bernoulli(t(p)).
        temp(D, T) ~ normal(t(mu), t(sigma)).
        good_weather(D) :- humid(D) =:= 1, temp(D) < 0.
        good_weather(D) :- humid(D) =:= 0, temp(D) > 15.
    ";
    let ast = parse(src).unwrap();
    let s =
        store(&[("p", 0.4, Constraint::Unit), ("mu", 5.0, Constraint::Real), ("sigma", 10.0, Constraint::Positive)]);
    let data = BTreeMap::new();
    let ctx = Context { store: &s, networks: &[], data: &data };
    let p = plan(&ast, "good_weather(d)");
    for mode in [Mode::Hard, Mode::Soft, Mode::StraightThrough] {
        let cfg = InferenceConfig { mode, ..soft(3000, 4, 5.0) };
        let (r, _) = grad_query(&p, ctx, &cfg).unwrap();
        let plain = infer(&p, ctx, &cfg).unwrap();
        assert_eq!(r.estimate.to_bits(), plain.estimate.to_bits(), "{mode:?}");
        assert_eq!(r.std_error.to_bits(), plain.std_error.to_bits(), "{mode:?}");
    }
}

#[test]
fn soft_gradients_match_common_random_number_differences() {
    let src = "
        humid(D) ~ bernoulli(t(p)).
        temp(D, T) ~ normal(t(mu), t(sigma)).
        good_weather(D) :- humid(D) =:= 1, temp(D) < 0.
        good_weather(D) :- humid(D) =:= 0, temp(D) > 15.
    ";
    let ast = parse(src).unwrap();
    let s =
        store(&[("p", 0.4, Constraint::Unit), ("mu", 5.0, Constraint::Real), ("sigma", 10.0, Constraint::Positive)]);
    let data = BTreeMap::new();
    let p = plan(&ast, "good_weather(d)");
    let cfg = soft(4000, 9, 2.0);
    let ctx = Context { store: &s, networks: &[], data: &data };
    let (_, g) = grad_query(&p, ctx, &cfg).unwrap();
    for name in ["p", "mu", "sigma"] {
        let fd = fd_gradient(&s, name, 0, 1e-5, |st| {
            infer(&p, Context { store: st, networks: &[], data: &data }, &cfg).map(|r| r.estimate)
        })
        .unwrap();
        let rel = (g[name][0] - fd).abs() / fd.abs().max(1e-3);
        assert!(rel < 1e-3, "{name}: {} vs {fd}", g[name][0]);
    }
}

#[test]
fn hard_mode_has_no_pathwise_gradient() {
    let ast = parse("x ~ normal(t(mu), 1). q :- x < 0.").unwrap();
    let s = store(&[("mu", 0.0, Constraint::Real)]);
    let data = BTreeMap::new();
    let ctx = Context { store: &s, networks: &[], data: &data };
    let cfg = InferenceConfig { mode: Mode::Hard, ..soft(1000, 0, 10.0) };
    let (_, g) = grad_query(&plan(&ast, "q"), ctx, &cfg).unwrap();
    assert_eq!(g["mu"], vec![0.0]);
    let st = InferenceConfig { mode: Mode::StraightThrough, ..cfg };
    let (_, g) = grad_query(&plan(&ast, "q"), ctx, &st).unwrap();
    assert!(g["mu"][0] < 0.0);
}
