//! `calc` subcommands: JSON records `{kind, inputs, outputs, terms}`.

use clap::{Args, Subcommand};
use fedopt_core::analysis::{
    empirical_stationary_covariance, pac_bayes_bound, stationary_covariance, theoretical_rate, OuConfig, PacInputs,
    PreconditionerMode, RateInputs,
};
use fedopt_core::params::{Purpose, SeedSpec, SERVER};
use nalgebra::DMatrix;
use serde_json::{json, Value};

use crate::CliError;

#[derive(Debug, Subcommand)]
pub enum CalcKind {
    /// Two-term convergence rate.
    Rate(RateArgs),
    /// PAC-Bayes generalization bound.
    Pac(PacArgs),
    /// Stationary covariance of the preconditioned linear dynamics.
    Cov(CovArgs),
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
pub struct RateArgs {
    /// Smoothness constant L.
    #[arg(long)]
    pub l: f64,
    /// Initial suboptimality f(x0) - f*.
    #[arg(long)]
    pub delta: f64,
    #[arg(long)]
    pub sigma_l: f64,
    /// Participating clients per round.
    #[arg(long)]
    pub s: f64,
    /// Local steps.
    #[arg(long)]
    pub k: f64,
    /// Rounds.
    #[arg(long)]
    pub r: f64,
    #[arg(long)]
    pub eps: f64,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
pub struct PacArgs {
    /// Hessian eigenvalues, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub sigmas: Vec<f64>,
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,
    #[arg(long)]
    pub eta: f64,
    /// Prior variance.
    #[arg(long)]
    pub rho: f64,
    /// Batch size.
    #[arg(long)]
    pub b: f64,
    /// Training-set size.
    #[arg(long)]
    pub n: f64,
    /// Failure probability.
    #[arg(long)]
    pub tau: f64,
    #[arg(long, default_value_t = 0.0)]
    pub xstar_norm: f64,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
pub struct CovArgs {
    /// Symmetric matrix H: rows separated by ';', entries by ','.
    #[arg(long, allow_hyphen_values = true)]
    pub h: String,
    #[arg(long)]
    pub eta: f64,
    #[arg(long)]
    pub b: f64,
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,
    /// Also estimate the covariance by simulating this many steps.
    #[arg(long)]
    pub simulate_steps: Option<usize>,
    #[arg(long, default_value_t = 1000)]
    pub burn_in: usize,
    /// Use the live second-moment preconditioner in the simulation.
    #[arg(long)]
    pub live: bool,
}

fn parse_matrix(text: &str) -> Result<DMatrix<f64>, CliError> {
    let rows: Vec<Vec<f64>> = text
        .split(';')
        .map(|row| {
            row.split(',')
                .map(|x| {
                    x.trim()
                        .parse::<f64>()
                        .map_err(|e| CliError::Config(format!("--h: cannot parse '{}': {e}", x.trim())))
                })
                .collect()
        })
        .collect::<Result<_, _>>()?;
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(CliError::Config(format!("--h must be square; got {n} rows of lengths {:?}", rows.iter().map(Vec::len).collect::<Vec<_>>())));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn matrix_json(m: &DMatrix<f64>) -> Value {
    Value::from(
        (0..m.nrows())
            .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect::<Vec<f64>>())
            .collect::<Vec<_>>(),
    )
}

/// Evaluates one calculator and returns its record.
pub fn evaluate(kind: &CalcKind, seed: u64) -> Result<Value, CliError> {
    match kind {
        CalcKind::Rate(a) => {
            let inputs = RateInputs {
                l: a.l,
                delta: a.delta,
                sigma_l: a.sigma_l,
                s: a.s,
                k: a.k,
                r: a.r,
                eps: a.eps,
            };
            let t = theoretical_rate(&inputs)?;
            Ok(json!({
                "kind": "rate",
                "inputs": inputs,
                "outputs": {"value": t.total},
                "terms": {"noise": t.noise, "optimization": t.optimization},
            }))
        }
        CalcKind::Pac(a) => {
            let inputs = PacInputs {
                sigmas: a.sigmas.clone(),
                lambda: a.lambda,
                eta: a.eta,
                rho: a.rho,
                b: a.b,
                n: a.n,
                tau: a.tau,
                xstar_norm: a.xstar_norm,
            };
            let t = pac_bayes_bound(&inputs)?;
            Ok(json!({
                "kind": "pac",
                "inputs": inputs,
                "outputs": {"value": t.bound},
                "terms": {
                    "log_term": t.log_term,
                    "trace_term": t.trace_term,
                    "constant": t.constant,
                    "bracket": t.bracket,
                },
            }))
        }
        CalcKind::Cov(a) => {
            let h = parse_matrix(&a.h)?;
            let m = stationary_covariance(&h, a.eta, a.b, a.lambda)?;
            let mut outputs = json!({"covariance": matrix_json(&m)});
            if m.nrows() == 1 {
                outputs["value"] = json!(m[(0, 0)]);
            }
            if let Some(steps) = a.simulate_steps {
                let cfg = OuConfig {
                    eta: a.eta,
                    b: a.b,
                    lambda: a.lambda,
                    steps,
                    burn_in: a.burn_in,
                    noise_scale: 1.0,
                    mode: if a.live { PreconditionerMode::Live } else { PreconditionerMode::Frozen },
                };
                let mut rng = SeedSpec::new(seed).rng(0, SERVER, Purpose::Simulation);
                let emp = empirical_stationary_covariance(&h, &cfg, &mut rng)?;
                outputs["empirical"] = matrix_json(&emp);
            }
            Ok(json!({
                "kind": "cov",
                "inputs": {
                    "h": matrix_json(&h),
                    "eta": a.eta,
                    "b": a.b,
                    "lambda": a.lambda,
                    "simulate_steps": a.simulate_steps,
                    "burn_in": a.burn_in,
                    "live": a.live,
                    "seed": seed,
                },
                "outputs": outputs,
                "terms": {"prefactor": a.eta / (2.0 * a.b)},
            }))
        }
    }
}

pub fn name(kind: &CalcKind) -> &'static str {
    match kind {
        CalcKind::Rate(_) => "rate",
        CalcKind::Pac(_) => "pac",
        CalcKind::Cov(_) => "cov",
    }
}
