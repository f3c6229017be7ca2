use std::fmt::Write as _;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use dspl_core::autodiff::OptimizerKind;
use dspl_core::ground::GroundOptions;
use dspl_core::model::Model;
use dspl_core::oracle::Oracle;
use dspl_core::relax::Schedule;
use dspl_core::syntax::{parse_term, Atom};
use dspl_core::trainer::{train, Dataset, LossKind, TrainConfig};
use dspl_core::wmi::{infer, sample_worlds, Coolness, InferenceConfig, Mode, Plan};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::error::CliError;
use crate::{CheckArgs, Common, ExportArgs, LearnArgs, QueryArgs, SampleArgs};

/// Smallest gap `check` tolerates for an exact engine result.
const DISCRETE_GAP: f64 = 1e-9;
/// Allowed gap for sampled results, in standard errors.
const SE_GAP: f64 = 4.0;

fn load(c: &Common) -> Result<Model, CliError> {
    let mut model = Model::load(&c.program, 0)?;
    if let Some(p) = &c.params {
        model.store.load(p).map_err(|e| CliError::Io { path: p.display().to_string(), message: e.to_string() })?;
    }
    Ok(model)
}

/// Declared queries, or the ones selected with `--query`.
fn select_queries(model: &Model, c: &Common) -> Result<Vec<Atom>, CliError> {
    if c.queries.is_empty() {
        if model.ast.queries.is_empty() {
            return Err(CliError::Usage("the program declares no queries; pass --query".into()));
        }
        return Ok(model.ast.queries.clone());
    }
    let mut out = Vec::new();
    for name in &c.queries {
        let declared: Vec<&Atom> = model.ast.queries.iter().filter(|q| &q.pred == name).collect();
        if !declared.is_empty() {
            out.extend(declared.into_iter().cloned());
            continue;
        }
        let atom = parse_term(name)
            .ok()
            .and_then(|t| Atom::from_term(&t))
            .ok_or_else(|| CliError::Usage(format!("`{name}` is neither a declared query nor an atom")))?;
        out.push(atom);
    }
    Ok(out)
}

fn plan(model: &Model, c: &Common, q: &Atom) -> Result<Plan, CliError> {
    model
        .plan(q, &GroundOptions { depth_limit: c.depth_limit })
        .map_err(|source| CliError::Engine { query: q.to_string(), source })
}

fn mode(name: &str) -> Result<Mode, CliError> {
    Mode::from_name(name).ok_or_else(|| CliError::Usage(format!("unknown mode `{name}`; use hard, soft or st")))
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io { path: path.display().to_string(), message: e.to_string() }
}

fn print_json(v: &Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("plain JSON"));
}

fn timestamp() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn dot(plan: &Plan) -> String {
    plan.circuit.to_dot(|i| plan.program.atom_text(i))
}

pub fn query(a: &QueryArgs) -> Result<u8, CliError> {
    let model = load(&a.common)?;
    let cfg = InferenceConfig {
        n_samples: a.samples,
        seed: a.common.seed,
        mode: mode(&a.mode)?,
        coolness: Coolness::global(a.beta),
    };
    let mut results = Vec::new();
    let mut dots = String::new();
    for q in select_queries(&model, &a.common)? {
        let plan = plan(&model, &a.common, &q)?;
        let r = infer(&plan, model.context(), &cfg)
            .map_err(|e| CliError::Engine { query: q.to_string(), source: e.into() })?;
        if a.export_circuit.is_some() {
            dots.push_str(&dot(&plan));
        }
        results.push(r);
    }
    if let Some(path) = &a.export_circuit {
        std::fs::write(path, dots).map_err(io(path))?;
    }
    if a.common.json {
        let results: Vec<Value> = results.iter().map(|r| r.to_json()).collect();
        print_json(&json!({ "program": a.common.program.display().to_string(), "results": results }));
    } else {
        println!("{:<32} {:>12} {:>12} {:>10}  mode", "query", "estimate", "std_error", "samples");
        for r in &results {
            let n = if r.exact { "exact".to_string() } else { r.n_samples.to_string() };
            println!("{:<32} {:>12.6} {:>12.6} {:>10}  {}", r.query, r.estimate, r.std_error, n, r.mode.name());
        }
        println!("seed {}, finished at {}", a.common.seed, timestamp());
    }
    Ok(0)
}

pub fn learn(a: &LearnArgs) -> Result<u8, CliError> {
    let mut model = load(&a.common)?;
    let text = std::fs::read_to_string(&a.data).map_err(io(&a.data))?;
    let dataset = Dataset::from_jsonl(&text)?;
    let cfg = TrainConfig {
        loss: LossKind::from_name(&a.loss)
            .ok_or_else(|| CliError::Usage(format!("unknown loss `{}`; use bce or mse", a.loss)))?,
        optimizer: OptimizerKind::from_name(&a.optimizer)
            .ok_or_else(|| CliError::Usage(format!("unknown optimizer `{}`; use sgd, adam or adamax", a.optimizer)))?,
        lr: a.lr,
        batch: a.batch,
        epochs: a.epochs,
        max_steps: a.max_steps,
        n_samples: a.samples,
        seed: a.common.seed,
        schedule: Schedule::parse(&a.beta_schedule).map_err(CliError::Usage)?,
        mode: mode(&a.mode)?,
        lr_multipliers: a.lr_mult.iter().cloned().collect(),
        shuffle: !a.no_shuffle,
        depth_limit: a.common.depth_limit,
    };
    let report = train(&model.ast, &model.data, &dataset, &cfg, &mut model.store)?;
    let ckpt = a.checkpoint.clone().unwrap_or_else(|| a.data.with_extension("ckpt.json"));
    model.store.save(&ckpt).map_err(|e| CliError::Io { path: ckpt.display().to_string(), message: e.to_string() })?;
    if a.common.json {
        let mut v = serde_json::to_value(&report).expect("plain report");
        v["checkpoint"] = json!(ckpt.display().to_string());
        print_json(&v);
    } else {
        println!(
            "{} examples, {} epochs, {} steps, {} lr {}, batch {}, schedule {}",
            report.examples, report.epochs, report.steps, report.optimizer, report.lr, report.batch, report.schedule
        );
        for (i, (l, b)) in report.epoch_losses.iter().zip(&report.betas).enumerate() {
            println!("epoch {:>4}  beta {:>8.3}  mean {} loss {:.6}", i + 1, b, report.loss.name(), l);
        }
        for (name, v) in &report.params {
            let shown: Vec<String> = v.iter().take(6).map(|x| format!("{x:.6}")).collect();
            let more = if v.len() > 6 { format!(" … ({} values)", v.len()) } else { String::new() };
            println!("{name:<24} {}{more}", shown.join(" "));
        }
        println!("checkpoint {}, finished at {}", ckpt.display(), timestamp());
    }
    Ok(0)
}

pub fn check(a: &CheckArgs) -> Result<u8, CliError> {
    let model = load(&a.common)?;
    let cfg = InferenceConfig { n_samples: a.samples, seed: a.common.seed, ..InferenceConfig::default() };
    let oracle = Oracle::new(&model.ast, model.context()).with_depth_limit(a.common.depth_limit);
    let mut engine = Vec::new();
    for q in select_queries(&model, &a.common)? {
        let plan = plan(&model, &a.common, &q)?;
        let r = infer(&plan, model.context(), &cfg)
            .map_err(|e| CliError::Engine { query: q.to_string(), source: e.into() })?;
        engine.push((q, r));
    }
    // Reference integrals are slow and independent, so run them side by side.
    let reference: Vec<_> = engine.par_iter().map(|(q, _)| oracle.probability(q, a.tolerance)).collect();
    let (mut failed, mut unavailable) = (false, false);
    let mut rows = Vec::new();
    for ((q, r), reference) in engine.iter().zip(reference) {
        let mut row = json!({
            "query": r.query,
            "engine": r.estimate,
            "std_error": r.std_error,
            "exact": r.exact,
        });
        match reference {
            Ok(est) => {
                let gap = (r.estimate - est.value).abs();
                let allowed = if r.exact { DISCRETE_GAP } else { (SE_GAP * r.std_error).max(DISCRETE_GAP) } + est.bound;
                let ok = gap <= allowed;
                failed |= !ok;
                row["oracle"] = json!(est.value);
                row["oracle_bound"] = json!(est.bound);
                row["gap"] = json!(gap);
                row["allowed"] = json!(allowed);
                row["status"] = json!(if ok { "ok" } else { "mismatch" });
            }
            Err(e) if e.is_unavailable() => {
                unavailable = true;
                row["status"] = json!("unavailable");
                row["reason"] = json!(e.to_string());
            }
            Err(source) => return Err(CliError::Oracle { query: q.to_string(), source }),
        }
        rows.push(row);
    }
    let (code, status) = match (failed, unavailable) {
        (true, _) => (1, "mismatch"),
        (false, true) => (2, "oracle unavailable"),
        (false, false) => (0, "ok"),
    };
    if a.common.json {
        print_json(&json!({
            "program": a.common.program.display().to_string(),
            "samples": a.samples,
            "seed": a.common.seed,
            "status": status,
            "rows": rows,
        }));
    } else {
        println!("{:<32} {:>12} {:>12} {:>12} {:>10}  status", "query", "engine", "oracle", "gap", "allowed");
        for r in &rows {
            let num = |k: &str| r[k].as_f64().map_or("-".to_string(), |x| format!("{x:.3e}"));
            let oracle = r["oracle"].as_f64().map_or("-".to_string(), |x| format!("{x:.6}"));
            println!(
                "{:<32} {:>12.6} {:>12} {:>12} {:>10}  {}",
                r["query"].as_str().unwrap_or_default(),
                r["engine"].as_f64().unwrap_or(f64::NAN),
                oracle,
                num("gap"),
                num("allowed"),
                r["status"].as_str().unwrap_or_default()
            );
        }
        println!("{status}, finished at {}", timestamp());
    }
    Ok(code)
}

pub fn sample(a: &SampleArgs) -> Result<u8, CliError> {
    let model = load(&a.common)?;
    let mut out = Vec::new();
    for q in select_queries(&model, &a.common)? {
        let plan = plan(&model, &a.common, &q)?;
        let worlds = sample_worlds(&plan, model.context(), a.samples, a.common.seed)
            .map_err(|e| CliError::Engine { query: q.to_string(), source: e.into() })?;
        out.push((q.to_string(), worlds));
    }
    if a.common.json {
        let queries: Vec<Value> = out.iter().map(|(q, w)| json!({ "query": q, "worlds": w })).collect();
        print_json(
            &json!({ "program": a.common.program.display().to_string(), "seed": a.common.seed, "queries": queries }),
        );
        return Ok(0);
    }
    for (q, worlds) in &out {
        println!("{q}");
        let names: Vec<&String> = worlds.first().map(|w| w.values.keys().collect()).unwrap_or_default();
        let mut header = String::from("  holds");
        for n in &names {
            let _ = write!(header, "  {n:>14}");
        }
        println!("{header}");
        for w in worlds {
            let mut line = format!("  {:<5}", w.holds);
            for v in w.values.values() {
                let cell = v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(",");
                let _ = write!(line, "  {cell:>14}");
            }
            println!("{line}");
        }
    }
    println!("seed {}, finished at {}", a.common.seed, timestamp());
    Ok(0)
}

pub fn export_circuit(a: &ExportArgs) -> Result<u8, CliError> {
    let model = load(&a.common)?;
    let mut items = Vec::new();
    for q in select_queries(&model, &a.common)? {
        let plan = plan(&model, &a.common, &q)?;
        items.push((q.to_string(), plan.circuit.size(), dot(&plan)));
    }
    let text = if a.common.json {
        let v: Vec<Value> = items.iter().map(|(q, n, d)| json!({ "query": q, "nodes": n, "dot": d })).collect();
        serde_json::to_string_pretty(&v).expect("plain JSON") + "\n"
    } else {
        items.iter().map(|(q, _, d)| format!("// {q}\n{d}")).collect()
    };
    match &a.output {
        Some(path) => std::fs::write(path, text).map_err(io(path))?,
        None => print!("{text}"),
    }
    Ok(0)
}
