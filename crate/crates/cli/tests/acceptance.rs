//! End-to-end acceptance checks. Runs as a plain binary (`harness = false`) so
//! every check prints exactly one PASS/FAIL line, even when all of them pass.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use fedopt_core::analysis::{
    empirical_stationary_covariance, pac_bayes_bound, stationary_covariance, OuConfig, PacInputs, PreconditionerMode,
};
use fedopt_core::federation::{run, Algorithm, Federation, LrSchedule, RoundMetrics, RunConfig};
use fedopt_core::optim::{bias_correct, clip_gradient, moment_update, preconditioner, MomentState, OptimConfig};
use fedopt_core::params::{Purpose, Summation, SERVER};
use fedopt_core::partition::{partition_transformer, PartitionRule, TensorKind};
use fedopt_core::tasks::{finite_diff_check, random_point, QuadraticConfig, Task, TaskSpec};
use fedopt_core::{ParamVector, SeedSpec};
use nalgebra::DMatrix;
use rand::Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn ok<T>(r: fedopt_core::Result<T>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

/// Parallelism used for in-process runs. Results do not depend on it.
const JOBS: usize = 4;

fn base(algorithm: Algorithm, task: TaskSpec) -> RunConfig {
    RunConfig {
        algorithm,
        task,
        participating: 5,
        local_steps: 10,
        rounds: 20,
        optim: OptimConfig {
            eta: 0.01,
            ..OptimConfig::default()
        },
        lr_schedule: LrSchedule::Constant,
        partition: PartitionRule::PerTensor,
        warm_start_v: true,
        warm_start_m: false,
        decay_exclude: vec![],
        summation: Summation::Sequential,
        seed: 0,
        task_seed: None,
    }
}

fn mlp_task() -> TaskSpec {
    TaskSpec::Mlp {
        clients: 10,
        features: 8,
        hidden: 16,
        classes: 4,
        samples_per_class: 50,
        dirichlet_alpha: 0.6,
        batch_size: Some(16),
    }
}

fn attention_task() -> TaskSpec {
    TaskSpec::Attention {
        clients: 10,
        tokens: 8,
        seq_len: 5,
        embed_dim: 16,
        heads: 4,
        samples_per_class: 20,
        dirichlet_alpha: 0.6,
        batch_size: Some(16),
    }
}

fn trajectory(cfg: &RunConfig) -> Result<Vec<ParamVector>, String> {
    let task = ok(cfg.build_task())?;
    let fed = ok(Federation::new(cfg, task.as_ref(), JOBS))?;
    let mut xs = vec![fed.initial_state().x];
    ok(fed.run_observed(|_, next, _| xs.push(next.x.clone())))?;
    Ok(xs)
}

fn exact_reduction() -> Outcome {
    let mut fed = base(Algorithm::Fedadamw, mlp_task());
    fed.optim.alpha = 0.0;
    fed.optim.lambda = 0.01;
    fed.warm_start_v = false;
    let local = RunConfig {
        algorithm: Algorithm::LocalAdamw,
        ..fed.clone()
    };
    let a = trajectory(&fed)?;
    let b = trajectory(&local)?;
    ensure!(a.len() == 21 && b.len() == 21, "expected 21 iterates, got {} and {}", a.len(), b.len());
    let mut worst = 0.0_f64;
    for (r, (xa, xb)) in a.iter().zip(&b).enumerate() {
        let d = ok(xa.max_abs_diff(xb))?;
        ensure!(d <= 1e-12, "round {r}: max |x_fedadamw - x_local| = {d:e}");
        worst = worst.max(d);
    }
    let moved = ok(a[20].max_abs_diff(&a[0]))?;
    ensure!(moved > 1e-3, "model barely moved ({moved:e})");
    Ok(format!("max per-round diff {worst:e} over 20 rounds"))
}

fn server_identity() -> Outcome {
    let mut cfg = base(Algorithm::Fedadamw, mlp_task());
    cfg.rounds = 200;
    cfg.optim.alpha = 0.5;
    cfg.optim.lambda = 0.01;
    cfg.lr_schedule = LrSchedule::Cosine { eta_min: 1e-4 };
    let task = ok(cfg.build_task())?;
    let fed = ok(Federation::new(&cfg, task.as_ref(), JOBS))?;
    let k = cfg.local_steps as f64;
    let mut worst = 0.0_f64;
    let mut failure = None;
    ok(fed.run_observed(|prev, next, _| {
        let eta = fed.eta(prev.round);
        let step = next.x.sub(&prev.x).expect("same length");
        let residual = step.add(&next.delta_g.scale(k * eta).expect("finite")).expect("same length");
        let rel = residual.norm() / prev.x.norm();
        worst = worst.max(rel);
        if rel > 1e-10 && failure.is_none() {
            failure = Some(format!("round {}: residual {rel:e} x ||x||", prev.round));
        }
    }))?;
    if let Some(f) = failure {
        return Err(f);
    }
    Ok(format!("worst relative residual {worst:.2e} over 200 rounds"))
}

fn bias_correction() -> Outcome {
    let cfg = OptimConfig {
        eta: 0.1,
        ..OptimConfig::default()
    };
    let g = ParamVector::from_vec(vec![0.7, -1.3, 2.5e-3, 40.0]).unwrap();
    for steps in [1u64, 5, 50] {
        let mut st = MomentState::zeros(4);
        for _ in 0..steps {
            st = ok(moment_update(st, &g, &cfg))?;
        }
        let (m_hat, v_hat) = ok(bias_correct(&st, &cfg))?;
        let err = m_hat.iter().zip(g.iter()).map(|(a, b)| (a - b).abs() / b.abs()).fold(0.0, f64::max);
        ensure!(err <= 1e-12, "k = {steps}: max relative |m_hat - g| = {err:e}");
        let verr = v_hat.iter().zip(g.iter()).map(|(v, b)| (v - b * b).abs() / (b * b)).fold(0.0, f64::max);
        ensure!(verr <= 1e-12, "k = {steps}: max relative |v_hat - g^2| = {verr:e}");
    }

    let mut rng = SeedSpec::new(3).rng(0, SERVER, Purpose::Simulation);
    let mut checked = 0usize;
    for trial in 0..50 {
        let clip = rng.random_range(0.05..5.0);
        let c = OptimConfig {
            eta: 0.1,
            grad_clip: Some(clip),
            ..OptimConfig::default()
        };
        let dim = 16;
        // A second moment accumulated over `history` clipped steps is at most
        // (1 - beta2^history) G^2 per entry.
        let history = rng.random_range(0..500u64);
        let cap = (1.0 - c.beta2.powi(history as i32)) * clip * clip;
        let v0 = ParamVector::from_vec((0..dim).map(|_| rng.random_range(0.0..=cap)).collect()).unwrap();
        let mut st = if history == 0 {
            MomentState::zeros(dim)
        } else {
            ok(MomentState::start_round(ParamVector::zeros(dim), v0, 0, history))?
        };
        for _ in 0..40 {
            let raw = ParamVector::from_vec((0..dim).map(|_| rng.random_range(-100.0..100.0)).collect()).unwrap();
            st = ok(moment_update(st, &clip_gradient(raw, &c), &c))?;
            let (_, v_hat) = ok(bias_correct(&st, &c))?;
            for &th in ok(preconditioner(&v_hat, &c))?.iter() {
                ensure!(
                    th <= 1.0 / c.eps && th >= 1.0 / (clip + c.eps) * (1.0 - 1e-12),
                    "trial {trial}: theta {th} outside [1/(G+eps), 1/eps] with G = {clip}"
                );
                checked += 1;
            }
        }
    }
    Ok(format!("m_hat == g for k in {{1,5,50}}; {checked} clipped preconditioner entries in bounds"))
}

fn gradient_oracles() -> Outcome {
    let quad = ok(TaskSpec::Quadratic(QuadraticConfig::new(50, 10, 5.0, 1.0)).build(&SeedSpec::new(1)))?;
    let mlp = ok(mlp_task().build(&SeedSpec::new(2)))?;
    let attn = ok(attention_task().build(&SeedSpec::new(3)))?;
    let cases: [(&str, &dyn Task, f64, f64); 3] =
        [("quadratic", quad.as_ref(), 1e-7, 3.0), ("mlp", mlp.as_ref(), 1e-4, 1.0), ("attention", attn.as_ref(), 1e-4, 0.5)];
    let mut rng = SeedSpec::new(4).rng(0, SERVER, Purpose::Simulation);
    let mut summary = Vec::new();
    for (name, task, tol, scale) in cases {
        let mut worst = 0.0_f64;
        for point in 0..5 {
            let x = random_point(task.dim(), scale, &mut rng);
            let client = rng.random_range(0..task.num_clients());
            let rep = ok(finite_diff_check(task, &x, client, tol, &mut rng))?;
            ensure!(rep.passed, "{name} point {point}: max relative error {:e} > {tol:e}", rep.max_rel_error);
            worst = worst.max(rep.max_rel_error);
        }
        summary.push(format!("{name} {worst:.1e}"));
    }
    Ok(format!("worst relative errors: {}", summary.join(", ")))
}

const ALPHAS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];
const SEEDS: u64 = 5;

fn heterogeneous(alpha: f64, warm_start_v: bool, seed: u64) -> RunConfig {
    let mut cfg = base(Algorithm::Fedadamw, TaskSpec::Quadratic(QuadraticConfig::new(50, 100, 5.0, 1.0)));
    cfg.participating = 10;
    cfg.local_steps = 20;
    cfg.rounds = 200;
    cfg.optim.eta = 0.001;
    cfg.optim.alpha = alpha;
    cfg.warm_start_v = warm_start_v;
    cfg.seed = seed;
    cfg
}

fn run_cfg(cfg: &RunConfig) -> Result<Vec<RoundMetrics>, String> {
    let task = ok(cfg.build_task())?;
    ok(run(cfg, task.as_ref(), JOBS))
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn drift_correction() -> Outcome {
    let mut medians = Vec::new();
    for alpha in ALPHAS {
        let mut finals = Vec::new();
        for seed in 0..SEEDS {
            finals.push(run_cfg(&heterogeneous(alpha, true, seed))?.last().unwrap().loss);
        }
        medians.push(median(finals));
    }
    let shown: Vec<String> = ALPHAS.iter().zip(&medians).map(|(a, m)| format!("{a}:{m:.4}")).collect();
    ensure!(medians[2] < medians[0], "median loss at alpha 0.5 is not below alpha 0 ({})", shown.join(" "));
    let best = (0..5).min_by(|&i, &j| medians[i].total_cmp(&medians[j])).unwrap();
    ensure!(best != 0 && best != 4, "minimum at alpha {} ({})", ALPHAS[best], shown.join(" "));
    Ok(format!("median final loss by alpha {}; minimum at {}", shown.join(" "), ALPHAS[best]))
}

fn variance_reduction() -> Outcome {
    let window = |m: &[RoundMetrics]| m[50..].iter().map(|r| r.v_variance).sum::<f64>() / (m.len() - 50) as f64;
    let mut warm = Vec::new();
    let mut cold = Vec::new();
    for seed in 0..SEEDS {
        warm.push(window(&run_cfg(&heterogeneous(0.5, true, seed))?));
        cold.push(window(&run_cfg(&heterogeneous(0.5, false, seed))?));
    }
    let (w, c) = (median(warm), median(cold));
    ensure!(w < c, "warm {w:e} is not below cold {c:e}");
    Ok(format!("median v variance over rounds 50-200: warm {w:.2e}, cold {c:.2e}"))
}

fn linear_speedup() -> Outcome {
    let rounds = 300;
    let mut plateaus = Vec::new();
    for s in [5usize, 10, 20] {
        let mut total = 0.0;
        for seed in 0..3 {
            let mut cfg = base(Algorithm::Fedadamw, TaskSpec::Quadratic(QuadraticConfig::new(50, 100, 0.0, 1.0)));
            cfg.participating = s;
            cfg.local_steps = 20;
            cfg.rounds = rounds;
            cfg.optim.alpha = 0.5;
            cfg.seed = seed;
            let m = run_cfg(&cfg)?;
            total += m[rounds - 50..].iter().map(|r| r.grad_norm_sq).sum::<f64>() / 50.0;
        }
        plateaus.push(total / 3.0);
    }
    let ratios = [plateaus[0] / plateaus[1], plateaus[1] / plateaus[2]];
    for (i, r) in ratios.iter().enumerate() {
        ensure!((1.4..=2.8).contains(r), "plateau ratio {r:.3} at doubling {} outside [1.4, 2.8] ({plateaus:?})", i + 1);
    }
    Ok(format!(
        "plateaus {:.3e}/{:.3e}/{:.3e} for S=5/10/20, ratios {:.2} and {:.2}",
        plateaus[0], plateaus[1], plateaus[2], ratios[0], ratios[1]
    ))
}

/// Term-by-term loop evaluation of the PAC-Bayes bound.
fn pac_oracle(p: &PacInputs) -> f64 {
    let mut total = 0.0;
    for s in &p.sigmas {
        let c = s.sqrt() + p.lambda;
        total += (2.0 * p.rho * p.b * c / p.eta).ln();
        total += p.eta / (2.0 * p.rho * p.b) / c;
        total -= 0.5;
    }
    total += p.xstar_norm * p.xstar_norm / (2.0 * p.rho);
    total += 2.0 * (2.0 * p.n / p.tau).ln();
    (8.0 * total / p.n).sqrt()
}

fn pac_bayes() -> Outcome {
    let worked = PacInputs {
        sigmas: vec![1.0],
        lambda: 0.0,
        eta: 2.0,
        rho: 1.0,
        b: 1.0,
        n: 100.0,
        tau: 0.5,
        xstar_norm: 0.0,
    };
    let oracle = pac_oracle(&worked);
    ensure!((oracle - 0.9994).abs() <= 1e-3, "oracle gives {oracle} for the worked example");
    let got = ok(pac_bayes_bound(&worked))?.bound;
    ensure!((got - 0.9994).abs() <= 1e-3, "calculator gives {got} for the worked example");
    ensure!((got - oracle).abs() <= 1e-12 * oracle, "calculator {got} vs oracle {oracle}");

    let mut rng = SeedSpec::new(8).rng(0, SERVER, Purpose::Simulation);
    let mut worst = 0.0_f64;
    for i in 0..100 {
        let d = rng.random_range(1..=20);
        let p = PacInputs {
            sigmas: (0..d).map(|_| rng.random_range(1e-3..100.0)).collect(),
            lambda: if rng.random_bool(0.3) { 0.0 } else { rng.random_range(0.0..1.0) },
            eta: rng.random_range(1e-3..1.0),
            rho: rng.random_range(0.1..10.0),
            b: rng.random_range(1..512) as f64,
            n: rng.random_range(10..100_000) as f64,
            tau: rng.random_range(0.01..0.5),
            xstar_norm: rng.random_range(0.0..5.0),
        };
        let got = ok(pac_bayes_bound(&p))?.bound;
        let want = pac_oracle(&p);
        let rel = (got - want).abs() / want.abs();
        ensure!(rel <= 1e-12, "random case {i}: {got} vs oracle {want} (rel {rel:e})");
        worst = worst.max(rel);
    }
    Ok(format!("worked example {got:.6}; 100 random cases within {worst:.1e} of the oracle"))
}

fn ou_covariance() -> Outcome {
    let (h_val, eta, b) = (4.0, 0.01, 10.0);
    let h = DMatrix::from_element(1, 1, h_val);
    let closed = ok(stationary_covariance(&h, eta, b, 0.0))?[(0, 0)];
    // Exact stationary variance of x' = (1 - eta sqrt(H)) x - eta H^{-1/2} u, u ~ N(0, H/b).
    let a = 1.0 - eta * h_val.sqrt();
    let discrete = eta * eta / h_val * (h_val / b) / (1.0 - a * a);
    ensure!(
        (closed - discrete).abs() <= 0.02 * discrete,
        "closed form {closed:e} disagrees with the discrete recursion {discrete:e}"
    );
    let cfg = OuConfig {
        eta,
        b,
        lambda: 0.0,
        steps: 1_000_000,
        burn_in: 1000,
        noise_scale: 1.0,
        mode: PreconditionerMode::Frozen,
    };
    let seed = SeedSpec::new(9);
    let plain = ok(empirical_stationary_covariance(&h, &cfg, &mut seed.rng(0, SERVER, Purpose::Simulation)))?[(0, 0)];
    let decayed = ok(empirical_stationary_covariance(
        &h,
        &OuConfig { lambda: 1.0, ..cfg },
        &mut seed.rng(0, SERVER, Purpose::Simulation),
    ))?[(0, 0)];
    let rel = (plain - closed).abs() / closed;
    ensure!(rel <= 0.2, "simulated {plain:e} vs closed form {closed:e} (rel {rel:.3})");
    ensure!(decayed < plain, "lambda = 1 variance {decayed:e} is not below {plain:e}");
    Ok(format!(
        "closed form {closed:.4e}, recursion {discrete:.4e}, simulated {plain:.4e} ({:.1}%), lambda=1 {decayed:.4e}",
        100.0 * rel
    ))
}

fn write_config(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
    let path = dir.join(format!("{name}.json"));
    std::fs::write(&path, body).unwrap();
    path
}

fn run_binary(config: &Path, out: &Path, jobs: &str) -> Result<Vec<u8>, String> {
    let status = Command::new(env!("CARGO_BIN_EXE_fedopt-lab"))
        .args(["--jobs", jobs, "run"])
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(
        status.status.success(),
        "run with --jobs {jobs} failed: {}",
        String::from_utf8_lossy(&status.stderr)
    );
    std::fs::read(out.join("metrics.csv")).map_err(|e| e.to_string())
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let configs = [
        (
            "quadratic",
            r#"{"algorithm": "fedadamw", "participating": 10, "local_steps": 5, "rounds": 15,
                "task": {"kind": "quadratic", "dim": 20, "clients": 30, "sigma_g": 2.0, "sigma_l": 1.0},
                "optim": {"eta": 0.01, "alpha": 0.5, "lambda": 0.01}, "seed": 7}"#,
        ),
        (
            "attention",
            r#"{"algorithm": "fedadamw", "participating": 4, "local_steps": 3, "rounds": 5,
                "task": {"kind": "attention", "clients": 8, "tokens": 8, "seq_len": 5, "embed_dim": 16, "heads": 4,
                         "samples_per_class": 10, "batch_size": 8},
                "partition": {"rule": "transformer"}, "warm_start_m": true,
                "optim": {"eta": 0.01, "alpha": 0.5, "lambda": 0.01}, "seed": 3}"#,
        ),
        (
            "scaffold",
            r#"{"algorithm": "scaffold", "participating": 5, "local_steps": 4, "rounds": 8,
                "task": {"kind": "mlp", "clients": 10, "features": 6, "hidden": 8, "classes": 3, "batch_size": 8},
                "optim": {"eta": 0.05}, "seed": 11}"#,
        ),
    ];
    for (name, body) in configs {
        let cfg = write_config(tmp.path(), name, body);
        let serial = run_binary(&cfg, &tmp.path().join(format!("{name}-serial")), "1")?;
        let parallel = run_binary(&cfg, &tmp.path().join(format!("{name}-parallel")), "4")?;
        ensure!(serial == parallel, "{name}: metrics.csv differs between --jobs 1 and --jobs 4");
        ensure!(serial.iter().filter(|&&c| c == b'\n').count() > 1, "{name}: metrics.csv has no rows");
    }
    Ok("metrics.csv byte-identical for --jobs 1 and --jobs 4 on 3 configs".into())
}

fn partition_counts() -> Outcome {
    let task = ok(attention_task().build(&SeedSpec::new(0)))?;
    let layout = task.layout();
    // tokens = 8, heads = 4, output neurons = 16.
    let expected: [(&str, TensorKind, usize); 8] = [
        ("embed.weight", TensorKind::Embed, 8),
        ("pos_embed", TensorKind::Other, 1),
        ("attn.query.weight", TensorKind::Query, 4),
        ("attn.key.weight", TensorKind::Key, 4),
        ("attn.value.weight", TensorKind::Value, 16),
        ("attn.proj.weight", TensorKind::AttnProj, 16),
        ("output.weight", TensorKind::Output, 8),
        ("output.bias", TensorKind::Other, 1),
    ];
    ensure!(layout.len() == expected.len(), "layout has {} tensors, expected {}", layout.len(), expected.len());
    let partition = ok(partition_transformer(&layout))?;
    let mut offset = 0;
    for (meta, (name, kind, count)) in layout.iter().zip(expected) {
        ensure!(meta.name == name && meta.kind == kind, "tensor {} ({:?}) where {name} ({kind:?}) was expected", meta.name, meta.kind);
        let range = offset..offset + meta.numel();
        let inside = partition
            .blocks()
            .iter()
            .filter(|b| b.range.start >= range.start && b.range.end <= range.end)
            .count();
        ensure!(inside == count, "{name}: {inside} blocks, expected {count}");
        offset = range.end;
    }
    ensure!(partition.num_blocks() == 58, "{} blocks in total, expected 58", partition.num_blocks());

    let dim = task.dim();
    let rules = [
        PartitionRule::Transformer { value_single_block: false },
        PartitionRule::Transformer { value_single_block: true },
        PartitionRule::PerTensor,
        PartitionRule::Singleton,
        PartitionRule::Global,
        PartitionRule::Equal { blocks: 7 },
    ];
    for rule in &rules {
        let p = ok(rule.build(&layout, dim))?;
        let mut covered = vec![0u8; dim];
        for b in p.blocks() {
            ensure!(!b.range.is_empty(), "{rule:?}: empty block {}", b.name);
            for j in b.range.clone() {
                covered[j] += 1;
            }
        }
        ensure!(covered.iter().all(|&c| c == 1), "{rule:?}: blocks do not cover every coordinate exactly once");
    }
    Ok(format!("58 blocks match the per-tensor table; {} rules are disjoint covers of d = {dim}", rules.len()))
}

fn communication() -> Outcome {
    let mut cfg = base(Algorithm::Fedadamw, attention_task());
    cfg.rounds = 2;
    cfg.local_steps = 2;
    cfg.partition = PartitionRule::Transformer { value_single_block: false };
    let up = |cfg: &RunConfig| -> Result<u64, String> {
        let m = run_cfg(cfg)?;
        ensure!(m.iter().all(|r| r.bytes_up == m[0].bytes_up), "uplink bytes vary across rounds");
        Ok(m[0].bytes_up)
    };
    let fed = up(&cfg)?;
    let local = up(&RunConfig {
        algorithm: Algorithm::LocalAdamw,
        ..cfg.clone()
    })?;
    let blocks = 58;
    ensure!(fed == local + 8 * blocks, "fedadamw uplink {fed} != local_adamw {local} + 8 * {blocks}");

    let mean_v = up(&cfg)?;
    let vm = up(&RunConfig {
        partition: PartitionRule::Singleton,
        warm_start_m: true,
        ..cfg.clone()
    })?;
    ensure!(vm > mean_v, "Agg-vm uplink {vm} is not above Agg-mean-v {mean_v}");
    Ok(format!("uplink bytes: local_adamw {local}, fedadamw {fed} (+8*{blocks}), Agg-vm {vm} > Agg-mean-v {mean_v}"))
}

struct Criterion {
    id: usize,
    name: &'static str,
    limit: Option<Duration>,
    check: fn() -> Outcome,
}

fn main() {
    let secs = |s| Some(Duration::from_secs(s));
    let criteria = [
        Criterion { id: 1, name: "exact reduction to local AdamW", limit: secs(10), check: exact_reduction },
        Criterion { id: 2, name: "server update identity", limit: secs(30), check: server_identity },
        Criterion { id: 3, name: "bias correction and preconditioner bound", limit: None, check: bias_correction },
        Criterion { id: 4, name: "gradient oracles", limit: secs(60), check: gradient_oracles },
        Criterion { id: 5, name: "drift correction alpha sweep", limit: secs(300), check: drift_correction },
        Criterion { id: 6, name: "warm-start variance reduction", limit: secs(300), check: variance_reduction },
        Criterion { id: 7, name: "linear speedup in S", limit: secs(300), check: linear_speedup },
        Criterion { id: 8, name: "PAC-Bayes calculator", limit: None, check: pac_bayes },
        Criterion { id: 9, name: "stationary covariance", limit: secs(60), check: ou_covariance },
        Criterion { id: 10, name: "determinism across --jobs", limit: None, check: determinism },
        Criterion { id: 11, name: "attention partition", limit: None, check: partition_counts },
        Criterion { id: 12, name: "communication accounting", limit: None, check: communication },
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for c in &criteria {
        if !filter.is_empty() && !filter.iter().any(|f| c.name.contains(f.as_str()) || *f == c.id.to_string()) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(c.check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let result = match (result, c.limit) {
            (Ok(_), Some(limit)) if elapsed > limit => Err(format!("took {elapsed:.1?}, limit {limit:?}")),
            (r, _) => r,
        };
        match result {
            Ok(detail) => println!("PASS  [{:>2}] {}: {detail} ({elapsed:.1?})", c.id, c.name),
            Err(why) => {
                failed += 1;
                println!("FAIL  [{:>2}] {}: {why} ({elapsed:.1?})", c.id, c.name);
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
