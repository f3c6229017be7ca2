use statrs::distribution::{ContinuousCDF, Normal};

use super::*;
use crate::autodiff::Tensor;
use crate::circuit::Circuit;
use crate::ground::{ground_query, GroundOptions, Lit, ProofFormula};
use crate::oracle::{Oracle, DEFAULT_TOLERANCE};
use crate::syntax::{parse, parse_term, Atom, Constraint, ProgramAst};

fn atom(s: &str) -> Atom {
    Atom::from_term(&parse_term(s).unwrap()).unwrap()
}

fn program(src: &str) -> ProgramAst {
    parse(src).unwrap_or_else(|e| panic!("{e}"))
}

fn plan(ast: &ProgramAst, query: &str) -> Result<Plan, WmiError> {
    Plan::new(ground_query(ast, &atom(query), &GroundOptions::default()).unwrap())
}

fn run_with(src: &str, query: &str, store: &ParameterStore, cfg: &InferenceConfig) -> Result<QueryResult, WmiError> {
    let ast = program(src);
    let data = BTreeMap::new();
    let ctx = Context { store, networks: &ast.networks, data: &data };
    infer(&plan(&ast, query)?, ctx, cfg)
}

fn run(src: &str, query: &str, cfg: &InferenceConfig) -> QueryResult {
    run_with(src, query, &ParameterStore::new(), cfg).unwrap()
}

fn hard(n: usize, seed: u64) -> InferenceConfig {
    InferenceConfig { n_samples: n, seed, ..Default::default() }
}

fn oracle(src: &str, query: &str) -> f64 {
    let ast = program(src);
    let store = ParameterStore::new();
    let data = BTreeMap::new();
    let ctx = Context { store: &store, networks: &ast.networks, data: &data };
    Oracle::new(&ast, ctx).probability(&atom(query), DEFAULT_TOLERANCE).unwrap().value
}

fn phi(x: f64) -> f64 {
    Normal::new(0.0, 1.0).unwrap().cdf(x)
}

const WEATHER: &str = "
    humid(D) ~ bernoulli(0.4).
    temp(D, T) ~ normal(5, 10).
    good_weather(D) :- humid(D) =:= 1, temp(D) < 0.
    good_weather(D) :- humid(D) =:= 0, temp(D) > 15.
";

const BURGLARY: &str = "
    0.1 :: earthquake. 0.3 :: burglary. 0.9 :: hears.
    0.7 :: alarm :- earthquake.
    0.9 :: alarm :- burglary.
    calls :- alarm, hears.
";

#[test]
fn weather_estimate() {
    let closed = 0.4 * phi(-0.5) + 0.6 * (1.0 - phi(1.0));
    let r = run(WEATHER, "good_weather(d)", &hard(100_000, 0));
    assert!((r.estimate - closed).abs() < 3.0 * r.std_error, "{} ± {} vs {closed}", r.estimate, r.std_error);
    assert!(!r.exact && r.std_error > 0.0);
    assert_eq!(r.query, "good_weather(d)");
    assert_eq!(r.discrete_exact_fraction, 0.5);
}

#[test]
fn burglary_is_exact() {
    let r = run(BURGLARY, "calls", &hard(1000, 3));
    assert_eq!(r.std_error, 0.0);
    assert!(r.exact);
    assert!((r.estimate - 0.28899).abs() < 1e-12, "{}", r.estimate);
    assert_eq!(r.n_samples, 1000);
    assert_eq!(r.discrete_exact_fraction, 1.0);
}

#[test]
fn trivial_queries() {
    let t = run("q.", "q", &hard(10, 0));
    assert_eq!((t.estimate, t.std_error, t.exact), (1.0, 0.0, true));
    let f = run("q(a).", "q(b)", &hard(10, 0));
    assert_eq!((f.estimate, f.std_error), (0.0, 0.0));
    let never = run("x ~ normal(0, 1). q :- x > 1, x < 0.", "q", &hard(10, 0));
    assert_eq!(never.estimate, 0.0);
}

#[test]
fn json_fields() {
    let r = run(BURGLARY, "calls", &InferenceConfig { seed: 7, ..Default::default() });
    let j = r.to_json();
    for key in ["query", "estimate", "std_error", "n_samples", "mode", "seed"] {
        assert!(j.get(key).is_some(), "missing {key}");
    }
    assert_eq!(j["mode"], "hard");
    assert_eq!(j["seed"], 7);
    assert_eq!(j["n_samples"], DEFAULT_SAMPLES);
}

fn single(atom: usize) -> ProofFormula {
    ProofFormula { dnf: vec![vec![Lit::pos(atom)]] }
}

#[test]
fn weighted_circuit_examples() {
    let c = Circuit::compile(&single(0), &[0]).unwrap();
    assert_eq!(evaluate_circuit_weighted(&c, &[], &[Some(0.3)]).unwrap(), 0.3);
    let table = DiscreteTable {
        atoms: vec![0],
        rows: vec![(0.4, vec![AtomValue::Known(true)]), (0.6, vec![AtomValue::Known(false)])],
    };
    assert!((evaluate_circuit_weighted(&c, &[table], &[None]).unwrap() - 0.4).abs() < 1e-15);
    let never = Circuit::compile(&ProofFormula::falsum(), &[]).unwrap();
    assert_eq!(evaluate_circuit_weighted::<f64>(&never, &[], &[]).unwrap(), 0.0);
    let short = DiscreteTable { atoms: vec![0], rows: vec![(0.9, vec![AtomValue::Known(true)])] };
    assert!(matches!(evaluate_circuit_weighted(&c, &[short], &[None]), Err(WmiError::InconsistentEncoding(_))));
    assert!(matches!(evaluate_circuit_weighted::<f64>(&c, &[], &[None]), Err(WmiError::InconsistentEncoding(_))));
}

#[test]
fn weighted_circuit_mixes_tables_and_continuous_atoms() {
    // (a0 and a1) or a2, with a0, a1 in one table and a2 continuous.
    let f = ProofFormula { dnf: vec![vec![Lit::pos(0), Lit::pos(1)], vec![Lit::pos(2)]] };
    let c = Circuit::compile(&f, &[0, 1, 2]).unwrap();
    let k = AtomValue::Known;
    let table = DiscreteTable {
        atoms: vec![0, 1],
        rows: vec![
            (0.1, vec![k(true), k(true)]),
            (0.2, vec![k(true), k(false)]),
            (0.3, vec![k(false), k(true)]),
            (0.4, vec![k(false), AtomValue::Weighted(0.5)]),
        ],
    };
    let got = evaluate_circuit_weighted(&c, &[table], &[None, None, Some(0.25)]).unwrap();
    let expect = 0.1 + 0.9 * 0.25;
    assert!((got - expect).abs() < 1e-15, "{got}");
}

#[test]
fn straight_through_forward_equals_hard() {
    let h = run(WEATHER, "good_weather(d)", &hard(5000, 11));
    let st = run(WEATHER, "good_weather(d)", &InferenceConfig { mode: Mode::StraightThrough, ..hard(5000, 11) });
    assert_eq!(h.estimate.to_bits(), st.estimate.to_bits());
    assert_eq!(h.std_error.to_bits(), st.std_error.to_bits());
    let soft = run(WEATHER, "good_weather(d)", &InferenceConfig { mode: Mode::Soft, ..hard(5000, 11) });
    assert_ne!(h.estimate, soft.estimate);
    assert!((h.estimate - soft.estimate).abs() < 0.02);
}

#[test]
fn thread_count_does_not_change_results() {
    let at = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run(WEATHER, "good_weather(d)", &hard(20_000, 7)))
    };
    let (one, eight) = (at(1), at(8));
    assert_eq!(one.estimate.to_bits(), eight.estimate.to_bits());
    assert_eq!(one.std_error.to_bits(), eight.std_error.to_bits());
    assert_eq!(one, run(WEATHER, "good_weather(d)", &hard(20_000, 7)));
}

#[test]
fn seeds_change_samples() {
    let a = run(WEATHER, "good_weather(d)", &hard(2000, 1));
    let b = run(WEATHER, "good_weather(d)", &hard(2000, 2));
    assert_ne!(a.estimate, b.estimate);
}

#[test]
fn standard_error_shrinks_with_root_n() {
    let small = run(WEATHER, "good_weather(d)", &hard(10_000, 5));
    let large = run(WEATHER, "good_weather(d)", &hard(40_000, 5));
    let ratio = large.std_error / small.std_error;
    assert!(ratio > 0.5 / 1.5 && ratio < 0.5 * 1.5, "{ratio}");
    // Each sample weighs 0.4 [t < 0] + 0.6 [t > 15]; the two events are disjoint.
    let (p1, p0) = (phi(-0.5), 1.0 - phi(1.0));
    let closed = 0.4 * p1 + 0.6 * p0;
    let second = 0.16 * p1 + 0.36 * p0;
    let sd = (second - closed * closed).sqrt();
    assert!((large.std_error * 200.0 - sd).abs() < 0.1 * sd, "{} vs {sd}", large.std_error * 200.0);
}

#[test]
fn estimates_are_calibrated_across_seeds() {
    let closed = 0.4 * phi(-0.5) + 0.6 * (1.0 - phi(1.0));
    let inside = (0..40)
        .filter(|&s| {
            let r = run(WEATHER, "good_weather(d)", &hard(10_000, s));
            (r.estimate - closed).abs() < 3.0 * r.std_error
        })
        .count();
    assert!(inside >= 37, "{inside}/40");
}

#[test]
fn poisson_tail_is_exact() {
    for lambda in [2.0f64, 5.0, 10.0] {
        let src = format!("x ~ poisson({lambda}). q :- x > 11.");
        let r = run(&src, "q", &hard(100, 0));
        assert!(r.exact);
        assert!((r.estimate - oracle(&src, "q")).abs() < 1e-12);
    }
}

#[test]
fn mixed_atom_sums_discrete_rows() {
    let src = "n ~ poisson(2). y ~ normal(0, 1). q :- y < n - 2.";
    let r = run(src, "q", &hard(50_000, 3));
    let o = oracle(src, "q");
    assert!((r.estimate - o).abs() < 4.0 * r.std_error, "{} ± {} vs {o}", r.estimate, r.std_error);
    // Summing out n leaves only the normal's noise.
    assert!(r.std_error < 0.002);
}

#[test]
fn coupled_discrete_variables_are_exact() {
    let src = "
        a ~ categorical([0.5, 0.5], [0, 1]).
        b ~ categorical([0.5, 0.5], [0, 1]).
        q :- a + b =:= 1.
        r :- a > 0, b < 1.
    ";
    let q = run(src, "q", &hard(10, 0));
    assert!(q.exact && (q.estimate - 0.5).abs() < 1e-15);
    let r = run(src, "r", &hard(10, 0));
    assert!((r.estimate - 0.25).abs() < 1e-15);
}

#[test]
fn vector_normal_distance() {
    let src = "neighbour(n, N) ~ normal([0, 0], [1, 1]). near :- neighbour(n, N), distance(N, [0, 0]) < 1.";
    let r = run(src, "near", &hard(100_000, 0));
    let closed = 1.0 - (-0.5f64).exp();
    assert!((r.estimate - closed).abs() < 4.0 * r.std_error, "{} vs {closed}", r.estimate);
    assert!((closed - 0.393469).abs() < 1e-6);
}

#[test]
fn uniform_interval() {
    let r = run("x ~ uniform(0, 1). q :- x > 0.2, x < 0.5.", "q", &hard(100_000, 1));
    assert!((r.estimate - 0.3).abs() < 4.0 * r.std_error);
}

#[test]
fn joint_support_limits() {
    let three = "x ~ poisson(10). y ~ poisson(10). z ~ poisson(10).";
    let too_big = format!("{three} q :- x + y + z > 30.");
    let ast = program(&too_big);
    let p = plan(&ast, "q").unwrap();
    let store = ParameterStore::new();
    let data = BTreeMap::new();
    let ctx = Context { store: &store, networks: &[], data: &data };
    assert!(matches!(infer(&p, ctx, &hard(10, 0)), Err(WmiError::JointSupportTooLarge(_))));
    let mixed = format!("{three} w ~ normal(0, 1). q :- x + y + z + w > 30.");
    let ast = program(&mixed);
    let p = plan(&ast, "q").unwrap();
    assert!(matches!(infer(&p, ctx, &hard(10, 0)), Err(WmiError::MixedAtomUnsupported(_))));
}

#[test]
fn configuration_errors() {
    let ast = program(WEATHER);
    let p = plan(&ast, "good_weather(d)").unwrap();
    let store = ParameterStore::new();
    let data = BTreeMap::new();
    let ctx = Context { store: &store, networks: &[], data: &data };
    assert!(matches!(infer(&p, ctx, &hard(0, 0)), Err(WmiError::Config(_))));
    let bad = InferenceConfig { coolness: Coolness::global(0.0), ..Default::default() };
    assert!(matches!(infer(&p, ctx, &bad), Err(WmiError::Config(_))));
    let mut per = Coolness::global(10.0);
    per.per_atom.insert(0, f64::NAN);
    assert!(matches!(
        infer(&p, ctx, &InferenceConfig { coolness: per, ..Default::default() }),
        Err(WmiError::Config(_))
    ));
    assert_eq!(Mode::from_name("st"), Some(Mode::StraightThrough));
    assert_eq!(Mode::from_name("fuzzy"), None);
}

#[test]
fn distribution_errors_name_the_variable() {
    let err = run_with("x ~ normal(0, -1). q :- x > 0.", "q", &ParameterStore::new(), &hard(10, 0)).unwrap_err();
    assert!(matches!(&err, WmiError::Dist { rv, .. } if rv == "x"), "{err}");
}

#[test]
fn continuous_equality_is_flagged() {
    let r = run("x ~ normal(0, 1). q :- x =:= 0.", "q", &hard(1000, 0));
    assert!(r.continuous_equality);
    assert_eq!(r.estimate, 0.0);
    assert!(!run(WEATHER, "good_weather(d)", &hard(10, 0)).continuous_equality);
}

#[test]
fn parameter_only_atoms() {
    let mut store = ParameterStore::new();
    store.insert("a", Tensor::scalar(0.7), Constraint::Real).unwrap();
    let r = run_with("q :- t(a) > 0.5.", "q", &store, &hard(10, 0)).unwrap();
    assert_eq!((r.estimate, r.exact), (1.0, true));
    store.insert("b", Tensor::scalar(0.2), Constraint::Real).unwrap();
    let r = run_with("x ~ normal(0, 1). q :- x > t(b) * 10.", "q", &store, &hard(50_000, 0)).unwrap();
    assert!((r.estimate - (1.0 - phi(2.0))).abs() < 4.0 * r.std_error);
}

#[test]
fn networks_may_not_read_random_variables() {
    let src = "#network net arch=[1,1] out=sigmoid\nx ~ normal(0, 1). q :- net(x) > 0.5.";
    let ast = program(src);
    assert!(matches!(plan(&ast, "q"), Err(WmiError::NeuralOnRandomVariable(_))));
}

#[test]
fn sampled_worlds_agree_with_the_estimate() {
    let ast = program(WEATHER);
    let s = ParameterStore::new();
    let data = BTreeMap::new();
    let ctx = Context { store: &s, networks: &ast.networks, data: &data };
    let p = plan(&ast, "good_weather(d)").unwrap();
    let worlds = sample_worlds(&p, ctx, 20_000, 5).unwrap();
    assert_eq!(worlds.len(), 20_000);
    assert_eq!(worlds[0].values.keys().collect::<Vec<_>>(), vec!["humid(d)", "temp(d)"]);
    let share = worlds.iter().filter(|w| w.holds).count() as f64 / 20_000.0;
    let humid = worlds.iter().filter(|w| w.values["humid(d)"] == [1.0]).count() as f64 / 20_000.0;
    let se = (0.2186f64 * 0.7814 / 20_000.0).sqrt();
    assert!((share - 0.218608).abs() < 4.0 * se, "{share}");
    assert!((humid - 0.4).abs() < 0.015, "{humid}");
    for w in &worlds[..200] {
        let (h, t) = (w.values["humid(d)"][0], w.values["temp(d)"][0]);
        assert_eq!(w.holds, (h == 1.0 && t < 0.0) || (h == 0.0 && t > 15.0));
    }
    assert_eq!(sample_worlds(&p, ctx, 300, 5).unwrap(), sample_worlds(&p, ctx, 300, 5).unwrap());
}
