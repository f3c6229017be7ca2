use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod error;

use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "dspl", version, about = "Query, check and train discrete-continuous probabilistic logic programs")]
struct Cli {
    /// Worker threads for sampling (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate the probability of each query.
    Query(QueryArgs),
    /// Fit parameters to a JSONL dataset of target probabilities.
    Learn(LearnArgs),
    /// Compare engine results against brute-force reference evaluators.
    Check(CheckArgs),
    /// Draw joint samples of a query's random variables.
    Sample(SampleArgs),
    /// Write the compiled decision diagram of each query as Graphviz DOT.
    ExportCircuit(ExportArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// Program file (.dspl).
    program: PathBuf,
    /// Query to run: a predicate name selecting declared queries, or a
    /// ground atom. Repeatable. Defaults to every declared query.
    #[arg(long = "query")]
    queries: Vec<String>,
    /// Sampler seed.
    #[arg(long, env = "DSPL_SEED", default_value_t = 0)]
    seed: u64,
    /// Maximum derivation depth while grounding.
    #[arg(long, default_value_t = dspl_core::ground::DEFAULT_DEPTH_LIMIT)]
    depth_limit: usize,
    /// Parameter checkpoint to load before running.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Print machine-readable JSON only.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct QueryArgs {
    #[command(flatten)]
    common: Common,
    /// Number of samples (accepts forms like 1e5).
    #[arg(long, value_parser = parse_count, default_value = "10000")]
    samples: usize,
    /// hard, soft or st (straight-through).
    #[arg(long, default_value = "hard")]
    mode: String,
    /// Coolness of relaxed comparisons.
    #[arg(long, default_value_t = dspl_core::wmi::DEFAULT_BETA)]
    beta: f64,
    /// Also write the circuits as DOT to this path.
    #[arg(long)]
    export_circuit: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct LearnArgs {
    #[command(flatten)]
    common: Common,
    /// JSONL dataset of {query, bindings, target} lines.
    data: PathBuf,
    #[arg(long, default_value_t = 1)]
    epochs: usize,
    /// Stop after this many optimizer steps.
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// sgd, adam or adamax.
    #[arg(long, default_value = "adamax")]
    optimizer: String,
    #[arg(long, default_value_t = 10)]
    batch: usize,
    /// bce or mse.
    #[arg(long, default_value = "bce")]
    loss: String,
    /// constant:B, linear:B:R or exponential:B:R.
    #[arg(long, default_value = "constant:50")]
    beta_schedule: String,
    /// soft or st.
    #[arg(long, default_value = "soft")]
    mode: String,
    /// Samples per example and step (accepts forms like 1e3).
    #[arg(long, value_parser = parse_count, default_value = "1000")]
    samples: usize,
    /// Learning-rate factor NAME=F for a parameter or network. Repeatable.
    #[arg(long = "lr-mult", value_parser = parse_multiplier)]
    lr_mult: Vec<(String, f64)>,
    /// Keep the dataset order instead of shuffling each epoch.
    #[arg(long)]
    no_shuffle: bool,
    /// Where to write the trained parameters (default: DATA with extension .ckpt.json).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CheckArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_parser = parse_count, default_value = "100000")]
    samples: usize,
    /// Requested absolute error of the reference integration.
    #[arg(long, default_value_t = CHECK_TOLERANCE)]
    tolerance: f64,
}

#[derive(Debug, Args)]
struct SampleArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_parser = parse_count, default_value = "10")]
    samples: usize,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[command(flatten)]
    common: Common,
    /// Output file (default: standard output).
    #[arg(long, short)]
    output: Option<PathBuf>,
}

/// Far below the sampling error of any practical run, and cheap enough to
/// integrate two dimensions in seconds.
const CHECK_TOLERANCE: f64 = 1e-6;

/// Integer counts written plainly or in scientific notation.
fn parse_count(s: &str) -> Result<usize, String> {
    if let Ok(n) = s.parse::<usize>() {
        return Ok(n);
    }
    match s.parse::<f64>() {
        Ok(x) if x >= 0.0 && x.fract() == 0.0 && x <= u32::MAX as f64 => Ok(x as usize),
        _ => Err(format!("`{s}` is not a whole number")),
    }
}

fn parse_multiplier(s: &str) -> Result<(String, f64), String> {
    let (name, v) = s.split_once('=').ok_or_else(|| format!("expected NAME=FACTOR, got `{s}`"))?;
    let v: f64 = v.parse().map_err(|_| format!("`{v}` is not a number"))?;
    Ok((name.to_string(), v))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t.max(1)).build_global() {
            eprintln!("dspl: cannot start {t} threads: {e}");
            return ExitCode::from(1);
        }
    }
    let (json, result) = match cli.command {
        Command::Query(a) => (a.common.json, commands::query(&a)),
        Command::Learn(a) => (a.common.json, commands::learn(&a)),
        Command::Check(a) => (a.common.json, commands::check(&a)),
        Command::Sample(a) => (a.common.json, commands::sample(&a)),
        Command::ExportCircuit(a) => (a.common.json, commands::export_circuit(&a)),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            report_error(&e, json);
            ExitCode::from(1)
        }
    }
}

fn report_error(e: &CliError, json: bool) {
    println!("{}", serde_json::to_string_pretty(&e.to_json()).expect("plain JSON"));
    if !json {
        eprintln!("dspl: {e}");
    }
}
