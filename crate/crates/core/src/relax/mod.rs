//! Sigmoid relaxations of comparison indicators, coolness schedules and the
//! pathwise gradient of a query probability.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;

use crate::autodiff::{Scalar, Tape};
use crate::syntax::CmpOp;
use crate::wmi::{
    block_range, block_rng, draw, draws_per_sample, prepare, sample_weight, tree_reduce, Context, InferenceConfig,
    Moments, ParamEnv, Plan, QueryResult, WmiError, BLOCK,
};

/// Smooth stand-in for the indicator of `g op 0`.
pub fn relax<S: Scalar>(g: S, op: CmpOp, beta: f64, beta_prime: f64) -> S {
    let eq = || (g * S::constant(beta)).sigmoid() * (g * S::constant(-beta_prime)).sigmoid();
    match op {
        CmpOp::Gt | CmpOp::Ge => (g * S::constant(beta)).sigmoid(),
        CmpOp::Lt | CmpOp::Le => (g * S::constant(-beta)).sigmoid(),
        CmpOp::Eq => eq(),
        CmpOp::Ne => S::constant(1.0) - eq(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Schedule {
    Constant { beta0: f64 },
    Linear { beta0: f64, rate: f64 },
    Exponential { beta0: f64, rate: f64 },
}

impl Schedule {
    /// Parses `constant:B`, `linear:B:R` or `exponential:B:R`.
    pub fn parse(s: &str) -> Result<Schedule, String> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |i: usize| -> Result<f64, String> {
            parts
                .get(i)
                .ok_or_else(|| format!("schedule `{s}` is missing a number"))?
                .parse::<f64>()
                .map_err(|e| format!("schedule `{s}`: {e}"))
        };
        let sched = match (parts[0], parts.len()) {
            ("constant", 2) => Schedule::Constant { beta0: num(1)? },
            ("linear", 3) => Schedule::Linear { beta0: num(1)?, rate: num(2)? },
            ("exponential", 3) => Schedule::Exponential { beta0: num(1)?, rate: num(2)? },
            _ => return Err(format!("unknown schedule `{s}`; use constant:B, linear:B:R or exponential:B:R")),
        };
        sched.validate()?;
        Ok(sched)
    }

    pub fn validate(&self) -> Result<(), String> {
        let ok = match *self {
            Schedule::Constant { beta0 } => beta0 > 0.0,
            Schedule::Linear { beta0, rate } => beta0 > 0.0 && rate >= 0.0,
            Schedule::Exponential { beta0, rate } => beta0 > 0.0 && rate >= 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(format!("schedule {self} must start positive and never decrease"))
        }
    }

    pub fn anneal(&self, epoch: usize) -> f64 {
        match *self {
            Schedule::Constant { beta0 } => beta0,
            Schedule::Linear { beta0, rate } => beta0 + rate * epoch as f64,
            Schedule::Exponential { beta0, rate } => beta0 * rate.powi(epoch as i32),
        }
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Schedule::Constant { beta0 } => write!(f, "constant:{beta0}"),
            Schedule::Linear { beta0, rate } => write!(f, "linear:{beta0}:{rate}"),
            Schedule::Exponential { beta0, rate } => write!(f, "exponential:{beta0}:{rate}"),
        }
    }
}

/// Gradients with respect to raw stored values, one vector per store entry.
pub type ParamGrads = BTreeMap<String, Vec<f64>>;

/// Estimate plus its gradient with respect to every stored parameter, from
/// the same samples `infer` would draw for this configuration.
///
/// Parameters are mapped to distribution parameters on one tape; each sample
/// is differentiated on its own small tape with respect to those
/// distribution parameters, and the averaged result is pulled back through
/// the first tape once.
pub fn grad_query(plan: &Plan, ctx: Context<'_>, cfg: &InferenceConfig) -> Result<(QueryResult, ParamGrads), WmiError> {
    cfg.validate()?;
    let global = Tape::new();
    let mut raw_leaves: BTreeMap<String, Vec<_>> = BTreeMap::new();
    let env = ParamEnv::new(ctx, |name, x| {
        let v = global.leaf(x);
        raw_leaves.entry(name.to_string()).or_default().push(v);
        v
    });
    let (iface, rows) = prepare(plan, &env)?;
    let outer = iface.flatten();
    let shape = iface.map(&mut |v| v.value());
    let width = outer.len();
    let exact = draws_per_sample(&shape) == 0;
    let (n, blocks) = if exact { (1, 1) } else { (cfg.n_samples, cfg.n_samples.div_ceil(BLOCK)) };

    let parts: Vec<(Moments, Vec<f64>)> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = block_rng(cfg.seed, b);
            let mut u = Vec::new();
            let mut m = Moments::default();
            let mut adj = vec![0.0; width];
            let mut tape = Tape::new();
            for _ in block_range(n, b) {
                if !exact {
                    draw(&shape, &mut rng, &mut u);
                }
                tape.reset();
                let mut leaves = Vec::with_capacity(width);
                let local = shape.map(&mut |v| {
                    let l = tape.leaf(v);
                    leaves.push(l);
                    l
                });
                let w = sample_weight(plan, &local, &rows, &u, cfg)?;
                let grads = tape.gradient(w);
                for (a, l) in adj.iter_mut().zip(&leaves) {
                    *a += grads.wrt(*l);
                }
                m.push(w.value());
            }
            Ok((m, adj))
        })
        .collect::<Result<_, WmiError>>()?;
    let (m, adj) =
        tree_reduce(parts, |(ma, ga), (mb, gb)| (ma.merge(mb), ga.into_iter().zip(gb).map(|(x, y)| x + y).collect()))
            .unwrap_or_else(|| (Moments::default(), vec![0.0; width]));

    let seeds: Vec<_> = outer.iter().zip(&adj).map(|(&v, &a)| (v, a / m.n)).collect();
    let grads = global.backward(&seeds);
    let out = raw_leaves.into_iter().map(|(k, vs)| (k, vs.iter().map(|&v| grads.wrt(v)).collect())).collect();
    let result = QueryResult {
        query: plan.query(),
        estimate: m.mean,
        std_error: m.std_error(),
        n_samples: cfg.n_samples,
        mode: cfg.mode,
        seed: cfg.seed,
        exact,
        discrete_exact_fraction: plan.discrete_fraction(),
        continuous_equality: plan.continuous_equality(),
    };
    Ok((result, out))
}

#[cfg(test)]
mod tests;
