use std::collections::BTreeMap;

use proptest::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use super::*;
use crate::autodiff::Tensor;
use crate::syntax::{parse, parse_term, Constraint};

fn atom(s: &str) -> Atom {
    Atom::from_term(&parse_term(s).unwrap()).unwrap()
}

fn with_oracle<T>(src: &str, store: &ParameterStore, f: impl FnOnce(&Oracle<'_>) -> T) -> T {
    let ast = parse(src).unwrap_or_else(|e| panic!("{e}"));
    let data = BTreeMap::new();
    let ctx = Context { store, networks: &ast.networks, data: &data };
    f(&Oracle::new(&ast, ctx))
}

fn exact(src: &str, query: &str) -> Result<f64, OracleError> {
    with_oracle(src, &ParameterStore::new(), |o| o.discrete_probability(&atom(query)))
}

fn integrated(src: &str, query: &str) -> Result<Estimate, OracleError> {
    with_oracle(src, &ParameterStore::new(), |o| o.probability(&atom(query), DEFAULT_TOLERANCE))
}

fn phi(x: f64) -> f64 {
    Normal::new(0.0, 1.0).unwrap().cdf(x)
}

const BURGLARY: &str = "
    0.1 :: earthquake. 0.3 :: burglary. 0.9 :: hears.
    0.7 :: alarm :- earthquake.
    0.9 :: alarm :- burglary.
    calls :- alarm, hears.
";

#[test]
fn classic_burglary() {
    let p = exact(BURGLARY, "calls").unwrap();
    assert!((p - 0.28899).abs() < 1e-12, "{p}");
    let e = integrated(BURGLARY, "calls").unwrap();
    assert!(e.exact && e.bound == 0.0 && (e.value - p).abs() < 1e-15);
}

#[test]
fn facts_negation_and_cycles() {
    assert_eq!(exact("q.", "q").unwrap(), 1.0);
    assert_eq!(exact("q(a).", "q(b)").unwrap(), 0.0);
    assert!((exact("0.3 :: a. b :- \\+ a.", "b").unwrap() - 0.7).abs() < 1e-15);
    let cyclic = "
        0.5 :: edge(a, b). 0.5 :: edge(b, a). 0.5 :: edge(b, c).
        path(X, Y) :- edge(X, Y).
        path(X, Y) :- edge(X, Z), path(Z, Y).
    ";
    assert!((exact(cyclic, "path(a, c)").unwrap() - 0.25).abs() < 1e-15);
    assert!((exact(cyclic, "path(a, a)").unwrap() - 0.25).abs() < 1e-15);
}

#[test]
fn one_choice_per_clause_instance() {
    // Two instances of the same probabilistic clause are independent.
    let src = "n(1). n(2). 0.5 :: p(X) :- n(X). q :- p(1), p(2). r :- p(1), p(1).";
    assert!((exact(src, "q").unwrap() - 0.25).abs() < 1e-15);
    assert!((exact(src, "r").unwrap() - 0.5).abs() < 1e-15);
}

#[test]
fn categorical_and_bernoulli_values() {
    let src = "
        c ~ categorical([0.2, 0.5, 0.3], [1, 2, 3]).
        b ~ bernoulli(0.4).
        q :- c + b > 2.
        z :- b =:= 0.
    ";
    // c = 3, or c = 2 with b = 1.
    assert!((exact(src, "q").unwrap() - (0.3 + 0.5 * 0.4)).abs() < 1e-15);
    assert!((exact(src, "z").unwrap() - 0.6).abs() < 1e-15);
}

#[test]
fn poisson_tail_matches_pmf() {
    for lambda in [2.0f64, 5.0, 10.0] {
        let src = format!("x ~ poisson({lambda}). q :- x > 11.");
        // Truncated pmf by the recurrence p(k) = p(k - 1) * lambda / k.
        let mut pmf = vec![(-lambda).exp()];
        let mut cdf = pmf[0];
        while cdf < 1.0 - 1e-9 {
            let k = pmf.len() as f64;
            let next = pmf[pmf.len() - 1] * lambda / k;
            pmf.push(next);
            cdf += next;
        }
        let tail: f64 = pmf.iter().skip(12).sum::<f64>() / cdf;
        let p = exact(&src, "q").unwrap();
        assert!((p - tail).abs() < 1e-12, "lambda {lambda}: {p} vs {tail}");
    }
}

#[test]
fn weather_by_quadrature() {
    let src = "
        humid(D) ~ bernoulli(0.4).
        temp(D, T) ~ normal(5, 10).
        good_weather(D) :- humid(D) =:= 1, temp(D) < 0.
        good_weather(D) :- humid(D) =:= 0, temp(D) > 15.
    ";
    let e = integrated(src, "good_weather(d)").unwrap();
    let closed = 0.4 * phi(-0.5) + 0.6 * (1.0 - phi(1.0));
    assert!(!e.exact);
    assert!((e.value - closed).abs() < 1e-8, "{} vs {closed}", e.value);
    assert!(e.bound < 1e-6);
    assert!((e.value - 0.218608).abs() < 1e-6);
}

#[test]
fn interval_of_a_uniform() {
    let e = integrated("x ~ uniform(0, 1). q :- x > 0.2, x < 0.5.", "q").unwrap();
    assert!((e.value - 0.3).abs() < 1e-8, "{}", e.value);
}

#[test]
fn mixed_discrete_and_continuous_comparison() {
    let e = integrated("n ~ poisson(2). y ~ normal(0, 1). q :- y < n - 2.", "q").unwrap();
    let mut closed = 0.0;
    let mut pk = (-2.0f64).exp();
    let mut total = 0.0;
    for k in 0..40 {
        if k > 0 {
            pk *= 2.0 / k as f64;
        }
        total += pk;
        closed += pk * phi(k as f64 - 2.0);
        if total >= 1.0 - 1e-9 {
            break;
        }
    }
    closed /= total;
    assert!((e.value - closed).abs() < 1e-7, "{} vs {closed}", e.value);
}

#[test]
fn two_dimensional_distance() {
    // P(|N| < 1) for a standard bivariate normal is 1 - exp(-1/2).
    let src = "neighbour(n, N) ~ normal([0, 0], [1, 1]). near :- neighbour(n, N), distance(N, [0, 0]) < 1.";
    let e = with_oracle(src, &ParameterStore::new(), |o| o.probability(&atom("near"), 1e-7)).unwrap();
    assert!((e.value - (1.0 - (-0.5f64).exp())).abs() < 1e-5, "{}", e.value);
}

#[test]
fn limits_are_reported_as_unavailable() {
    let three = "a ~ normal(0, 1). b ~ normal(0, 1). c ~ normal(0, 1). q :- a + b + c > 0.";
    let err = integrated(three, "q").unwrap_err();
    assert_eq!(err, OracleError::TooManyContinuous(3));
    assert!(err.is_unavailable());

    let names: Vec<String> = (0..17).map(|i| format!("a{i}")).collect();
    let facts: String = names.iter().map(|n| format!("0.5 :: {n}. ")).collect();
    let src = format!("{facts} q :- {}.", names.join(", "));
    let err = exact(&src, "q").unwrap_err();
    assert!(matches!(err, OracleError::TooLarge(_)) && err.is_unavailable());
}

#[test]
fn errors() {
    assert!(matches!(exact("q(a).", "q(X)"), Err(OracleError::NonGroundQuery(_))));
    assert!(matches!(exact("x ~ normal(0, 1). q :- x > 0.", "q"), Err(OracleError::Continuous(_))));
    assert!(matches!(exact("x ~ poisson(2). q :- x.", "q"), Err(OracleError::NotBoolean(_))));
    assert!(matches!(exact("q(X) :- q(f(X)).", "q(a)"), Err(OracleError::DepthExceeded { .. })));
    assert!(matches!(
        exact("x ~ poisson(2). y ~ bernoulli(x). q :- y.", "q"),
        Err(OracleError::DependentParameters(_))
    ));
    assert!(!OracleError::NonGround("X".into()).is_unavailable());
}

fn store(entries: &[(&str, f64, Constraint)]) -> ParameterStore {
    let mut s = ParameterStore::new();
    for &(name, v, c) in entries {
        s.insert(name, Tensor::scalar(v), c).unwrap();
    }
    s
}

#[test]
fn symbolic_gradients() {
    let s = store(&[("p", 0.3, Constraint::Real), ("u", 0.25, Constraint::Unit)]);
    let src = "t(p) :: a. t(u) :: b. both :- a, b. either :- a. either :- b.";
    with_oracle(src, &s, |o| {
        // d(pu)/dp = u; d(pu)/d raw(u) = p u (1 - u).
        let gp = o.discrete_gradient(&atom("both"), "p").unwrap();
        assert!((gp[0] - 0.25).abs() < 1e-12);
        let gu = o.discrete_gradient(&atom("both"), "u").unwrap();
        assert!((gu[0] - 0.3 * 0.25 * 0.75).abs() < 1e-12);
        // P = p + u - p u.
        let ge = o.discrete_gradient(&atom("either"), "p").unwrap();
        assert!((ge[0] - 0.75).abs() < 1e-12);
        assert!(o.discrete_gradient(&atom("both"), "missing").unwrap().is_empty());
    });
}

#[test]
fn symbolic_gradient_agrees_with_finite_differences() {
    let s = store(&[("rate", 3.0, Constraint::Positive)]);
    let src = "x ~ poisson(t(rate)). q :- x > 2, x < 6.";
    let q = atom("q");
    let symbolic = with_oracle(src, &s, |o| o.discrete_gradient(&q, "rate").unwrap()[0]);
    let fd = fd_gradient(&s, "rate", 0, 1e-5, |st| with_oracle(src, st, |o| o.discrete_probability(&q))).unwrap();
    assert!((symbolic - fd).abs() < 1e-7, "{symbolic} vs {fd}");
}

#[test]
fn unit_integrals() {
    let (v, b) = integrate_unit(1, |u: &[f64]| Ok::<_, ()>(u[0] * u[0]), 1e-10).unwrap();
    assert!((v - 1.0 / 3.0).abs() < 1e-12 && b < 1e-10);
    let (v, b) = integrate_unit(1, |u: &[f64]| Ok::<_, ()>(f64::from(u[0] > 0.3)), 1e-10).unwrap();
    assert!((v - 0.7).abs() < 2e-10 && b <= 1e-10, "{v} {b}");
    let (v, _) = integrate_unit(2, |u: &[f64]| Ok::<_, ()>(f64::from(u[0] + u[1] < 1.0)), 1e-8).unwrap();
    assert!((v - 0.5).abs() < 1e-7, "{v}");
    assert_eq!(integrate_unit(0, |_: &[f64]| Ok::<_, ()>(0.25), 1e-8).unwrap(), (0.25, 0.0));
    assert_eq!(integrate_unit(1, |_: &[f64]| Err::<f64, _>("stop"), 1e-8), Err("stop"));
}

#[test]
fn quantiles_invert_cdfs() {
    let dims = [
        Dim { family: Family::Normal, a: 1.0, b: 2.0, shape: 0.0 },
        Dim { family: Family::Uniform, a: -1.0, b: 3.0, shape: 0.0 },
        Dim { family: Family::Beta, a: 2.0, b: 5.0, shape: 0.0 },
        Dim { family: Family::GeneralizedNormal, a: 0.0, b: 1.5, shape: 4.0 },
    ];
    for d in &dims {
        for u in [0.01, 0.3, 0.5, 0.77, 0.99] {
            assert!((d.cdf(quantile(d, u)) - u).abs() < 1e-9, "{:?} at {u}", d.family);
        }
        assert!(quantile(d, 0.0).is_finite() && quantile(d, 1.0).is_finite());
    }
}

proptest! {
    #[test]
    fn dual_derivatives_match_finite_differences(x in 0.2f64..3.0) {
        let f = |v: Dual| (v.sigmoid() * v.ln() + v.powi(3) / (v + Dual::constant(1.0))).exp().softplus().tanh()
            - v.sqrt() * v.abs();
        let d = f(Dual { v: x, d: 1.0 });
        let h = 1e-6;
        let fd = (f(Dual::constant(x + h)).v - f(Dual::constant(x - h)).v) / (2.0 * h);
        prop_assert!((d.d - fd).abs() < 1e-6 * (1.0 + fd.abs()), "{} vs {}", d.d, fd);
        prop_assert_eq!(d.v, f(Dual::constant(x)).v);
    }
}

#[test]
fn strict_enumeration_rejects_infinite_supports() {
    let src = "x ~ poisson(2). q :- x > 1.";
    let err = with_oracle(src, &ParameterStore::new(), |o| o.enumerate_worlds(&atom("q"))).unwrap_err();
    assert_eq!(err, OracleError::NotFinite("x".into()));
    assert!((exact(src, "q").unwrap() - (1.0 - 3.0 * (-2.0f64).exp())).abs() < 1e-9);
    let p = with_oracle(BURGLARY, &ParameterStore::new(), |o| o.enumerate_worlds(&atom("calls"))).unwrap();
    assert!((p - 0.28899).abs() < 1e-12);
}

#[test]
fn quadrature_regions() {
    let normal = |a, b| Dim { family: Family::Normal, a, b, shape: 0.0 };
    let (v, bound) = quadrature_prob(&[normal(0.0, 1.0)], |x| x[0] <= 0.0, 1e-9).unwrap();
    assert!((v - 0.5).abs() < 1e-8 && bound < 1e-7, "{v} {bound}");
    let (v, _) = quadrature_prob(&[normal(5.0, 10.0)], |x| x[0] < 0.0, 1e-9).unwrap();
    assert!((v - 0.308538).abs() < 1e-6, "{v}");
    let unif = Dim { family: Family::Uniform, a: 0.0, b: 1.0, shape: 0.0 };
    let (v, _) = quadrature_prob(&[unif], |x| (0.2..=0.5).contains(&x[0]), 1e-9).unwrap();
    assert!((v - 0.3).abs() < 2e-9, "{v}");
    let (v, _) = quadrature_prob(&[normal(0.0, 1.0), normal(0.0, 1.0)], |x| x[0] > x[1], 1e-7).unwrap();
    assert!((v - 0.5).abs() < 1e-5, "{v}");
    let three = vec![normal(0.0, 1.0); 3];
    assert_eq!(quadrature_prob(&three, |_| true, 1e-9), Err(OracleError::TooManyContinuous(3)));
}

#[test]
fn finite_difference_examples() {
    let s = store(&[("theta", 0.0, Constraint::Real), ("other", 1.0, Constraint::Real)]);
    let q = atom("q");
    let src = "(0.3 + t(theta)) :: q. r :- t(other) > 0.";
    let d = fd_gradient(&s, "theta", 0, 1e-4, |st| with_oracle(src, st, |o| o.discrete_probability(&q))).unwrap();
    assert!((d - 1.0).abs() < 1e-9, "{d}");
    let d = fd_gradient(&s, "other", 0, 1e-4, |st| with_oracle(src, st, |o| o.discrete_probability(&q))).unwrap();
    assert_eq!(d, 0.0);
    let s = store(&[("mu", 0.0, Constraint::Real)]);
    let src = "x ~ normal(t(mu), 1). q :- x < 0.";
    let d = fd_gradient(&s, "mu", 0, 1e-4, |st| with_oracle(src, st, |o| o.probability(&q, 1e-10).map(|e| e.value)))
        .unwrap();
    assert!((d + 0.398942).abs() < 1e-4, "{d}");
}
