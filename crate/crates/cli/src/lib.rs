//! `fedopt-lab`: runs, sweeps and calculators on top of `fedopt-core`.
//!
//! ```text
//! fedopt-lab [--jobs N] [--seed S] run <config.json> [--out DIR]
//! fedopt-lab [--jobs N] [--seed S] sweep <config.json> [--out DIR]
//! fedopt-lab calc rate|pac|cov [--param value ...] [--out FILE]
//! ```
//!
//! Exit codes: 0 success, 1 I/O failure, 2 configuration error, 3 domain
//! error or divergence.

pub mod calc;
pub mod config;
pub mod output;

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use fedopt_core::federation::{Federation, RoundMetrics, RunConfig};
use rayon::prelude::*;
use serde::Serialize;

use crate::calc::CalcKind;
use crate::config::{repetition, ExperimentConfig};
use crate::output::{write_json, write_run_dir, RunSummary};

/// Overrides the output root.
pub const OUT_ENV: &str = "FEDOPT_LAB_OUT";
/// Output root when neither `--out` nor the environment variable is set.
pub const DEFAULT_OUT_ROOT: &str = "fedopt-out";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    Domain(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Config(_) => 2,
            CliError::Domain(_) => 3,
        }
    }
}

impl From<fedopt_core::Error> for CliError {
    fn from(e: fedopt_core::Error) -> Self {
        if e.is_config() {
            CliError::Config(e.to_string())
        } else {
            CliError::Domain(e.to_string())
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "fedopt-lab", version, about = "Federated AdamW experiment runner")]
pub struct Cli {
    /// Worker threads: clients per round for `run`, concurrent runs for `sweep`.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    /// Overrides the configured seed (the base seed for sweeps).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Execute one run.
    Run {
        config: PathBuf,
        /// Output directory (overrides the config and the environment).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Execute the Cartesian product of the sweep axes times repetitions.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a theory calculator.
    Calc {
        #[command(subcommand)]
        kind: CalcKind,
        /// File for the JSON record (default: <root>/calc/<kind>.json).
        #[arg(long, global = true)]
        out: Option<PathBuf>,
    },
}

fn out_root() -> PathBuf {
    std::env::var_os(OUT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_ROOT))
}

/// `--out`, else `<root>/<output_dir or config stem>`.
fn output_dir(explicit: Option<&Path>, exp: &ExperimentConfig, config_path: &Path) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    let name = exp.output_dir.clone().unwrap_or_else(|| {
        PathBuf::from(config_path.file_stem().unwrap_or_else(|| "run".as_ref()))
    });
    out_root().join(name)
}

/// Metrics and sizes of one finished run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub metrics: Vec<RoundMetrics>,
    pub summary: RunSummary,
}

/// Runs `cfg` with `jobs` client threads and writes its directory.
pub fn run_to_dir(cfg: &RunConfig, jobs: usize, dir: &Path) -> Result<RunOutcome, CliError> {
    let start = Instant::now();
    let resolved = cfg.resolved();
    let task = resolved.build_task()?;
    let fed = Federation::new(&resolved, task.as_ref(), jobs)?;
    let (_, metrics) = fed.run()?;
    let summary = RunSummary {
        version: env!("CARGO_PKG_VERSION"),
        config_hash: output::config_hash(&resolved),
        algorithm: resolved.algorithm.name(),
        seed: resolved.seed,
        task_seed: resolved.resolved_task_seed(),
        dim: task.dim(),
        blocks: fed.partition().num_blocks(),
        empty_client_repairs: task.empty_client_repairs(),
        rounds: resolved.rounds,
        last: metrics.last().cloned(),
        wall_clock_secs: start.elapsed().as_secs_f64(),
    };
    write_run_dir(dir, &resolved, &metrics, &summary)?;
    Ok(RunOutcome { metrics, summary })
}

fn cmd_run(path: &Path, out: Option<&Path>, jobs: usize, seed: Option<u64>) -> Result<(), CliError> {
    let mut exp = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        exp.run.seed = s;
    }
    let dir = output_dir(out, &exp, path);
    let outcome = run_to_dir(&exp.run, jobs, &dir)?;
    match &outcome.summary.last {
        Some(m) => println!(
            "{}: {} rounds, final loss {} grad_norm_sq {} -> {}",
            outcome.summary.algorithm,
            outcome.metrics.len(),
            m.loss,
            m.grad_norm_sq,
            dir.display()
        ),
        None => println!("{}: 0 rounds -> {}", outcome.summary.algorithm, dir.display()),
    }
    Ok(())
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

#[derive(Debug, Serialize)]
struct Failure {
    cell: usize,
    repetition: usize,
    exit_code: i32,
    error: String,
}

pub const TABLE_HEADER: [&str; 16] = [
    "cell",
    "algorithm",
    "alpha",
    "lambda",
    "participating",
    "local_steps",
    "blocks",
    "warm_start_v",
    "runs",
    "failed",
    "final_loss_mean",
    "final_loss_std",
    "final_loss_median",
    "final_grad_norm_sq_mean",
    "final_grad_norm_sq_std",
    "final_grad_norm_sq_median",
];

fn cmd_sweep(path: &Path, out: Option<&Path>, jobs: usize, seed: Option<u64>) -> Result<(), CliError> {
    let mut exp = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        exp.run.seed = s;
    }
    let dir = output_dir(out, &exp, path);
    std::fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let cells = exp.sweep.cells(&exp.run);
    let jobs_list: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..exp.repetitions).map(move |r| (c, r)))
        .collect();
    let execute = |&(c, r): &(usize, usize)| {
        let cfg = repetition(&cells[c].config, r);
        let run_dir = dir.join(format!("cell-{c:03}")).join(format!("rep-{r}"));
        run_to_dir(&cfg, 1, &run_dir)
    };
    let results: Vec<Result<RunOutcome, CliError>> = if jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| CliError::Config(format!("cannot start {jobs} worker threads: {e}")))?;
        pool.install(|| jobs_list.par_iter().map(execute).collect())
    } else {
        jobs_list.iter().map(execute).collect()
    };

    let mut failures = Vec::new();
    let mut table = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::Io(format!("writing table: {e}"));
    table.write_record(TABLE_HEADER).map_err(csv_err)?;
    for cell in &cells {
        let cfg = &cell.config;
        let cell_dir = dir.join(format!("cell-{:03}", cell.index));
        std::fs::create_dir_all(&cell_dir).map_err(|e| CliError::Io(format!("{}: {e}", cell_dir.display())))?;
        write_json(&cell_dir.join("cell.json"), &cfg.resolved())?;
        let mut losses = Vec::new();
        let mut grads = Vec::new();
        let mut failed = 0;
        for (&(c, r), res) in jobs_list.iter().zip(&results) {
            if c != cell.index {
                continue;
            }
            match res {
                Ok(o) => {
                    if let Some(m) = &o.summary.last {
                        losses.push(m.loss);
                        grads.push(m.grad_norm_sq);
                    }
                }
                Err(e) => {
                    failed += 1;
                    eprintln!("cell {c} repetition {r} failed: {e}");
                    failures.push(Failure {
                        cell: c,
                        repetition: r,
                        exit_code: e.exit_code(),
                        error: e.to_string(),
                    });
                }
            }
        }
        let (lm, ls) = mean_std(&losses);
        let (gm, gs) = mean_std(&grads);
        table
            .write_record([
                cell.index.to_string(),
                cfg.algorithm.name().to_string(),
                cfg.optim.alpha.to_string(),
                cfg.optim.lambda.to_string(),
                cfg.participating.to_string(),
                cfg.local_steps.to_string(),
                serde_json::to_string(&cfg.partition).expect("partition rules serialize"),
                cfg.warm_start_v.to_string(),
                exp.repetitions.to_string(),
                failed.to_string(),
                lm.to_string(),
                ls.to_string(),
                median(&losses).to_string(),
                gm.to_string(),
                gs.to_string(),
                median(&grads).to_string(),
            ])
            .map_err(csv_err)?;
    }
    let body = table
        .into_inner()
        .map_err(|e| CliError::Io(format!("writing table: {e}")))?;
    let table_path = dir.join("table.csv");
    std::fs::write(&table_path, body).map_err(|e| CliError::Io(format!("{}: {e}", table_path.display())))?;
    write_json(&dir.join("failures.json"), &failures)?;
    println!(
        "{} cells x {} repetitions, {} failed -> {}",
        cells.len(),
        exp.repetitions,
        failures.len(),
        dir.display()
    );
    match failures.iter().map(|f| f.exit_code).max() {
        None => Ok(()),
        Some(code) => {
            let msg = format!("{} of {} runs failed (see failures.json)", failures.len(), jobs_list.len());
            Err(if code == 2 { CliError::Config(msg) } else if code == 1 { CliError::Io(msg) } else { CliError::Domain(msg) })
        }
    }
}

fn cmd_calc(kind: &CalcKind, out: Option<&Path>, seed: Option<u64>) -> Result<(), CliError> {
    let record = calc::evaluate(kind, seed.unwrap_or(0))?;
    let path = match out {
        Some(p) => p.to_path_buf(),
        None => out_root().join("calc").join(format!("{}.json", calc::name(kind))),
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CliError::Io(format!("{}: {e}", parent.display())))?;
    }
    write_json(&path, &record)?;
    println!("{}", serde_json::to_string_pretty(&record).expect("records serialize"));
    Ok(())
}

/// Executes a parsed command line.
pub fn execute(cli: &Cli) -> Result<(), CliError> {
    if cli.jobs == 0 {
        return Err(CliError::Config("--jobs must be >= 1".into()));
    }
    match &cli.command {
        Command::Run { config, out } => cmd_run(config, out.as_deref(), cli.jobs, cli.seed),
        Command::Sweep { config, out } => cmd_sweep(config, out.as_deref(), cli.jobs, cli.seed),
        Command::Calc { kind, out } => cmd_calc(kind, out.as_deref(), cli.seed),
    }
}
