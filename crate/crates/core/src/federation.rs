//! Rounds, client loops and server aggregation.
//!
//! One round `r` of every algorithm:
//!
//! 1. the server samples `S` of `N` clients (ascending ids);
//! 2. each sampled client starts from `x^r` and runs `K` local steps with its
//!    own gradient stream `(seed, r, client)`;
//! 3. the server reduces the client updates in ascending id order.
//!
//! Clients in round `r` see the global update estimate `Delta_G` produced at
//! the end of round `r - 1` (zero in round 0). Because streams are keyed by
//! `(round, client)` and reductions run in a fixed order, serial and parallel
//! execution give bit-identical results.

use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use rayon::ThreadPool;
use serde::{Deserialize, Serialize};

use crate::analysis::{drift_metric, v_cross_client_variance};
use crate::error::{Error, Result};
use crate::optim::{
    adamw_step, bias_correct, clip_gradient, ensure_simplified, fedadamw_local_step, moment_update,
    simplified_local_step, sgd_step, DecayMask, MomentState, OptimConfig,
};
use crate::params::{
    block_mean_with, expand_block_means, BlockMeans, BlockPartition, ParamVector, Purpose, SeedSpec, Summation,
    SERVER,
};
use crate::partition::PartitionRule;
use crate::tasks::{Task, TaskSpec};

/// Bytes per transmitted scalar.
pub const SCALAR_BYTES: u64 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// AdamW on every client, moments reset to zero each round.
    LocalAdamw,
    /// AdamW with block-mean second-moment warm start and drift correction.
    Fedadamw,
    /// First-moment-free, decay-free variant with server step `x - gamma Delta_G`.
    FedadamwSimplified,
    Fedavg,
    Scaffold,
    Fedcm,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::LocalAdamw => "local_adamw",
            Algorithm::Fedadamw => "fedadamw",
            Algorithm::FedadamwSimplified => "fedadamw_simplified",
            Algorithm::Fedavg => "fedavg",
            Algorithm::Scaffold => "scaffold",
            Algorithm::Fedcm => "fedcm",
        }
    }

    /// Algorithms that upload block means of `v` and can warm-start moments.
    pub fn aggregates_moments(self) -> bool {
        matches!(self, Algorithm::Fedadamw | Algorithm::FedadamwSimplified)
    }

    fn uses_adam(self) -> bool {
        matches!(
            self,
            Algorithm::LocalAdamw | Algorithm::Fedadamw | Algorithm::FedadamwSimplified
        )
    }
}

/// Learning-rate schedule over rounds.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Cosine decay from `eta` in round 0 to `eta_min` in round `R - 1`.
    Cosine {
        #[serde(default)]
        eta_min: f64,
    },
}

impl LrSchedule {
    pub fn eta(&self, base: f64, round: usize, rounds: usize) -> f64 {
        match *self {
            LrSchedule::Constant => base,
            LrSchedule::Cosine { eta_min } => {
                if rounds <= 1 {
                    return base;
                }
                let frac = round as f64 / (rounds - 1) as f64;
                eta_min + 0.5 * (base - eta_min) * (1.0 + (std::f64::consts::PI * frac).cos())
            }
        }
    }
}

fn default_true() -> bool {
    true
}

/// Everything needed to replay a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub task: TaskSpec,
    /// Clients sampled per round (`S`). The population `N` comes from the task.
    pub participating: usize,
    /// Local steps per round (`K`).
    pub local_steps: usize,
    /// Communication rounds (`R`).
    pub rounds: usize,
    pub optim: OptimConfig,
    #[serde(default)]
    pub lr_schedule: LrSchedule,
    /// Partition used for the second-moment block means.
    #[serde(default)]
    pub partition: PartitionRule,
    /// Initialize each client's `v` from the broadcast block means.
    #[serde(default = "default_true")]
    pub warm_start_v: bool,
    /// Also average and broadcast the full first moment (doubles the uplink).
    #[serde(default)]
    pub warm_start_m: bool,
    /// Block or tensor names excluded from weight decay.
    #[serde(default)]
    pub decay_exclude: Vec<String>,
    /// Summation used by every server-side reduction and block mean.
    #[serde(default)]
    pub summation: Summation,
    /// Seed for client sampling and gradient noise.
    #[serde(default)]
    pub seed: u64,
    /// Seed for task generation and data splits; defaults to `seed`.
    #[serde(default)]
    pub task_seed: Option<u64>,
}

impl RunConfig {
    pub fn num_clients(&self) -> usize {
        self.task.num_clients()
    }

    pub fn validate(&self) -> Result<()> {
        self.optim.validate()?;
        let n = self.num_clients();
        if n == 0 {
            return Err(Error::Config("task must have at least one client".into()));
        }
        if self.participating == 0 || self.participating > n {
            return Err(Error::Config(format!(
                "participating must lie in 1..={n} (got {})",
                self.participating
            )));
        }
        if self.local_steps == 0 {
            return Err(Error::Config("local_steps must be >= 1".into()));
        }
        if let LrSchedule::Cosine { eta_min } = self.lr_schedule {
            if !(eta_min.is_finite() && eta_min >= 0.0 && eta_min <= self.optim.eta) {
                return Err(Error::Config(format!(
                    "lr_schedule.eta_min must lie in [0, optim.eta] (got {eta_min})"
                )));
            }
        }
        if self.algorithm == Algorithm::FedadamwSimplified {
            ensure_simplified(&self.optim)?;
        }
        Ok(())
    }

    /// Seed actually used for the task.
    pub fn resolved_task_seed(&self) -> u64 {
        self.task_seed.unwrap_or(self.seed)
    }

    /// Copy with every optional field made explicit.
    pub fn resolved(&self) -> RunConfig {
        RunConfig {
            task_seed: Some(self.resolved_task_seed()),
            ..self.clone()
        }
    }

    pub fn build_task(&self) -> Result<Box<dyn Task>> {
        self.task.build(&SeedSpec::new(self.resolved_task_seed()))
    }

    /// Per-client `(uplink, downlink)` payload in bytes for one round.
    pub fn payload_bytes(&self, dim: usize, blocks: usize) -> (u64, u64) {
        let d = dim as u64 * SCALAR_BYTES;
        let b = blocks as u64 * SCALAR_BYTES;
        match self.algorithm {
            Algorithm::LocalAdamw | Algorithm::Fedavg => (d, d),
            Algorithm::Fedcm => (d, 2 * d),
            Algorithm::Scaffold => (2 * d, 2 * d),
            Algorithm::Fedadamw | Algorithm::FedadamwSimplified => {
                let m = if self.warm_start_m { d } else { 0 };
                let v_down = if self.warm_start_v { b } else { 0 };
                // x and Delta_G down; delta and v block means up
                (d + b + m, 2 * d + v_down + m)
            }
        }
    }
}

/// SCAFFOLD control variates.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlVariates {
    pub server: ParamVector,
    pub clients: Vec<ParamVector>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServerState {
    pub x: ParamVector,
    pub v_bar: BlockMeans,
    /// Averaged first moment; only maintained with `warm_start_m`.
    pub m_bar: Option<ParamVector>,
    pub delta_g: ParamVector,
    pub round: usize,
    pub control: Option<ControlVariates>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub client_id: usize,
    /// `x_i^{r,K} - x^r`.
    pub delta: ParamVector,
    /// Block means of the final `v`; present for moment-aggregating algorithms.
    pub v_means: Option<BlockMeans>,
    /// Final first moment; present with `warm_start_m`.
    pub m: Option<ParamVector>,
    /// Change of the client's control variate (SCAFFOLD).
    pub control_delta: Option<ParamVector>,
    /// Bias-corrected second moment after the last step (diagnostic only).
    pub v_hat: Option<ParamVector>,
}

/// Per-round diagnostics, evaluated at the model produced by the round.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub loss: f64,
    pub grad_norm_sq: f64,
    pub drift: f64,
    /// Cross-client variance of the bias-corrected second moments (0 for SGD
    /// baselines).
    pub v_variance: f64,
    pub eta: f64,
    pub bytes_up: u64,
    pub bytes_down: u64,
    pub wall_clock_secs: f64,
}

/// `S` distinct clients drawn uniformly from `0..n`, in ascending order.
pub fn sample_clients(n: usize, s: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Result<Vec<usize>> {
    if s > n {
        return Err(Error::Config(format!("cannot sample {s} clients out of {n}")));
    }
    if s == n {
        return Ok((0..n).collect());
    }
    let mut ids = rand::seq::index::sample(rng, n, s).into_vec();
    ids.sort_unstable();
    Ok(ids)
}

/// A configured run over a task.
pub struct Federation<'a> {
    cfg: RunConfig,
    task: &'a dyn Task,
    partition: Arc<BlockPartition>,
    mask: Option<DecayMask>,
    seed: SeedSpec,
    pool: Option<ThreadPool>,
}

fn client_error(e: Error, round: usize, client: usize, step: usize) -> Error {
    match e {
        Error::NonFinite(_) => Error::Diverged { round, client, step },
        other => other,
    }
}

impl<'a> Federation<'a> {
    /// `jobs > 1` evaluates clients on a dedicated thread pool; results do not
    /// depend on `jobs`.
    pub fn new(cfg: &RunConfig, task: &'a dyn Task, jobs: usize) -> Result<Self> {
        cfg.validate()?;
        if task.num_clients() != cfg.num_clients() {
            return Err(Error::Config(format!(
                "task has {} clients but the config declares {}",
                task.num_clients(),
                cfg.num_clients()
            )));
        }
        let partition = Arc::new(cfg.partition.build(&task.layout(), task.dim())?);
        let mask = (!cfg.decay_exclude.is_empty()).then(|| DecayMask::from_partition(&partition, &cfg.decay_exclude));
        let pool = if jobs > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(jobs)
                    .build()
                    .map_err(|e| Error::Config(format!("cannot start {jobs} worker threads: {e}")))?,
            )
        } else {
            None
        };
        Ok(Federation {
            cfg: cfg.clone(),
            task,
            partition,
            mask,
            seed: SeedSpec::new(cfg.seed),
            pool,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn partition(&self) -> &Arc<BlockPartition> {
        &self.partition
    }

    pub fn initial_state(&self) -> ServerState {
        let d = self.task.dim();
        let control = (self.cfg.algorithm == Algorithm::Scaffold).then(|| ControlVariates {
            server: ParamVector::zeros(d),
            clients: vec![ParamVector::zeros(d); self.task.num_clients()],
        });
        ServerState {
            x: self.task.initial_params(),
            v_bar: BlockMeans::zeros(Arc::clone(&self.partition)),
            m_bar: (self.cfg.algorithm.aggregates_moments() && self.cfg.warm_start_m).then(|| ParamVector::zeros(d)),
            delta_g: ParamVector::zeros(d),
            round: 0,
            control,
        }
    }

    /// Scheduled learning rate of `round`.
    pub fn eta(&self, round: usize) -> f64 {
        self.cfg.lr_schedule.eta(self.cfg.optim.eta, round, self.cfg.rounds)
    }

    pub fn sample(&self, round: usize) -> Result<Vec<usize>> {
        let mut rng = self.seed.rng(round as u64, SERVER, Purpose::ClientSampling);
        sample_clients(self.task.num_clients(), self.cfg.participating, &mut rng)
    }

    fn gradient(
        &self,
        x: &ParamVector,
        client: usize,
        rng: &mut rand_chacha::ChaCha8Rng,
        round: usize,
        step: usize,
    ) -> Result<ParamVector> {
        let (loss, g) = self
            .task
            .loss_and_grad(x, client, rng)
            .map_err(|e| client_error(e, round, client, step))?;
        if !loss.is_finite() {
            return Err(Error::Diverged { round, client, step });
        }
        Ok(clip_gradient(g, &self.cfg.optim))
    }

    /// `K` local steps of `client` from the server state.
    pub fn client_round(&self, server: &ServerState, client: usize) -> Result<ClientUpdate> {
        let cfg = &self.cfg;
        let r = server.round;
        let k_steps = cfg.local_steps;
        let opt = cfg.optim.with_eta(self.eta(r));
        let mask = self.mask.as_ref();
        let d = self.task.dim();
        let mut rng = self.seed.rng(r as u64, client as u64, Purpose::Gradient);
        let mut x = server.x.clone();
        let fail = |e: Error, step: usize| client_error(e, r, client, step);
        let history = (r * k_steps) as u64;

        let mut update = ClientUpdate {
            client_id: client,
            delta: ParamVector::zeros(d),
            v_means: None,
            m: None,
            control_delta: None,
            v_hat: None,
        };

        if cfg.algorithm.uses_adam() {
            let fed = cfg.algorithm.aggregates_moments();
            let (v0, v_hist) = if fed && cfg.warm_start_v {
                (expand_block_means(&server.v_bar), history)
            } else {
                (ParamVector::zeros(d), 0)
            };
            let (m0, m_hist) = match (&server.m_bar, fed && cfg.warm_start_m) {
                (Some(m), true) => (m.clone(), history),
                _ => (ParamVector::zeros(d), 0),
            };
            let mut state = MomentState::start_round(m0, v0, m_hist, v_hist)?;
            let mut last_v_hat = None;
            for step in 0..k_steps {
                let g = self.gradient(&x, client, &mut rng, r, step)?;
                state = moment_update(state, &g, &opt).map_err(|e| fail(e, step))?;
                let (m_hat, v_hat) = bias_correct(&state, &opt).map_err(|e| fail(e, step))?;
                x = match cfg.algorithm {
                    Algorithm::LocalAdamw => adamw_step(&x, &m_hat, &v_hat, &opt, mask),
                    Algorithm::Fedadamw => fedadamw_local_step(&x, &m_hat, &v_hat, &server.delta_g, &opt, mask),
                    _ => simplified_local_step(&x, &g, &v_hat, &server.delta_g, &opt),
                }
                .map_err(|e| fail(e, step))?;
                last_v_hat = Some(v_hat);
            }
            update.v_hat = last_v_hat;
            if fed {
                update.v_means = Some(block_mean_with(&state.v, &self.partition, cfg.summation)?);
                if cfg.warm_start_m {
                    update.m = Some(state.m);
                }
            }
        } else {
            let control = match (&server.control, cfg.algorithm) {
                (Some(c), Algorithm::Scaffold) => Some((&c.server, &c.clients[client])),
                (None, Algorithm::Scaffold) => {
                    return Err(Error::Protocol("SCAFFOLD state is missing control variates".into()))
                }
                _ => None,
            };
            let alpha = opt.alpha;
            for step in 0..k_steps {
                let g = self.gradient(&x, client, &mut rng, r, step)?;
                let dir = match (cfg.algorithm, control) {
                    (Algorithm::Fedcm, _) => g.zip_map(&server.delta_g, |g, dg| (1.0 - alpha) * g + alpha * dg),
                    (Algorithm::Scaffold, Some((c, ci))) => {
                        g.sub(ci).and_then(|v| v.add(c))
                    }
                    _ => Ok(g),
                }
                .map_err(|e| fail(e, step))?;
                x = sgd_step(&x, &dir, &opt, mask).map_err(|e| fail(e, step))?;
            }
            if let Some((c, _)) = control {
                // c_i+ - c_i = -c + (x^r - x_i^K) / (K eta). A zero step size
                // carries no gradient information, so c_i is kept.
                let dc = if opt.eta > 0.0 {
                    let scale = 1.0 / (k_steps as f64 * opt.eta);
                    server
                        .x
                        .sub(&x)?
                        .zip_map(c, |moved, c| moved * scale - c)
                        .map_err(|e| fail(e, k_steps))?
                } else {
                    ParamVector::zeros(x.len())
                };
                update.control_delta = Some(dc);
            }
        }
        update.delta = x.sub(&server.x).map_err(|e| fail(e, k_steps))?;
        Ok(update)
    }

    fn mean_vectors<'b>(&self, vs: impl Iterator<Item = &'b ParamVector> + Clone, count: usize) -> Result<ParamVector> {
        let d = self.task.dim();
        let n = count as f64;
        let out = (0..d)
            .map(|j| self.cfg.summation.sum(vs.clone().map(|v| v[j])) / n)
            .collect();
        ParamVector::from_vec(out)
    }

    /// Reduces the updates of the clients sampled in `server.round`.
    pub fn server_aggregate(
        &self,
        server: &ServerState,
        sampled: &[usize],
        updates: &[ClientUpdate],
    ) -> Result<ServerState> {
        if updates.len() != sampled.len() || updates.iter().zip(sampled).any(|(u, &id)| u.client_id != id) {
            return Err(Error::Protocol(format!(
                "expected updates from clients {sampled:?}, got {:?}",
                updates.iter().map(|u| u.client_id).collect::<Vec<_>>()
            )));
        }
        let d = self.task.dim();
        for u in updates {
            u.delta.ensure_len(d)?;
        }
        let s = updates.len();
        let k = self.cfg.local_steps as f64;
        let eta = self.eta(server.round);
        let mean_delta = self.mean_vectors(updates.iter().map(|u| &u.delta), s)?;
        // Delta_G = -(1 / (S K eta)) sum_i delta_i
        let delta_g = if eta > 0.0 {
            mean_delta.scale(-1.0 / (k * eta))?
        } else {
            ParamVector::zeros(d)
        };
        let x = match self.cfg.algorithm {
            Algorithm::FedadamwSimplified => {
                let gamma = self.cfg.optim.gamma.unwrap_or(k * eta);
                server.x.sub(&delta_g.scale(gamma)?)?
            }
            _ => server.x.add(&mean_delta)?,
        };
        x.check_finite("aggregated model")?;

        let mut v_bar = server.v_bar.clone();
        let mut m_bar = server.m_bar.clone();
        if self.cfg.algorithm.aggregates_moments() {
            let blocks = self.partition.num_blocks();
            let mut means = Vec::with_capacity(blocks);
            for b in 0..blocks {
                let mut col = Vec::with_capacity(s);
                for u in updates {
                    let vm = u
                        .v_means
                        .as_ref()
                        .ok_or_else(|| Error::Protocol(format!("client {} sent no v means", u.client_id)))?;
                    col.push(vm.means()[b]);
                }
                means.push(self.cfg.summation.sum(col) / s as f64);
            }
            v_bar = BlockMeans::new(means, Arc::clone(&self.partition))?;
            if m_bar.is_some() {
                let ms: Vec<&ParamVector> = updates
                    .iter()
                    .map(|u| u.m.as_ref().ok_or_else(|| Error::Protocol(format!("client {} sent no m", u.client_id))))
                    .collect::<Result<_>>()?;
                m_bar = Some(self.mean_vectors(ms.into_iter(), s)?);
            }
        }

        let control = match &server.control {
            Some(c) => {
                let mut next = c.clone();
                let mut sum = vec![0.0; d];
                let deltas: Vec<&ParamVector> = updates
                    .iter()
                    .map(|u| {
                        u.control_delta
                            .as_ref()
                            .ok_or_else(|| Error::Protocol(format!("client {} sent no control delta", u.client_id)))
                    })
                    .collect::<Result<_>>()?;
                for (u, dc) in updates.iter().zip(&deltas) {
                    next.clients[u.client_id] = next.clients[u.client_id].add(dc)?;
                }
                for (j, acc) in sum.iter_mut().enumerate() {
                    *acc = self.cfg.summation.sum(deltas.iter().map(|dc| dc[j]));
                }
                // c += (1/N) sum_i dc_i
                let n = self.task.num_clients() as f64;
                next.server = next
                    .server
                    .zip_map(&ParamVector::from_vec(sum)?, |c, s| c + s / n)?;
                Some(next)
            }
            None => None,
        };

        Ok(ServerState {
            x,
            v_bar,
            m_bar,
            delta_g,
            round: server.round + 1,
            control,
        })
    }

    fn client_updates(&self, server: &ServerState, sampled: &[usize]) -> Result<Vec<ClientUpdate>> {
        let results: Vec<Result<ClientUpdate>> = match &self.pool {
            Some(pool) => pool.install(|| sampled.par_iter().map(|&c| self.client_round(server, c)).collect()),
            None => sampled.iter().map(|&c| self.client_round(server, c)).collect(),
        };
        results.into_iter().collect()
    }

    /// Runs one round and evaluates the new model.
    pub fn step(&self, server: &ServerState) -> Result<(ServerState, RoundMetrics)> {
        let start = Instant::now();
        let r = server.round;
        let sampled = self.sample(r)?;
        let updates = self.client_updates(server, &sampled)?;
        let next = self.server_aggregate(server, &sampled, &updates)?;

        let (loss, grad) = self
            .task
            .global_loss_and_grad(&next.x)
            .map_err(|e| match e {
                Error::NonFinite(what) => Error::NonFinite(format!("{what} after round {r}")),
                other => other,
            })?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("global loss after round {r}")));
        }
        let deltas: Vec<ParamVector> = updates.iter().map(|u| u.delta.clone()).collect();
        let drift = drift_metric(&deltas)?;
        let v_hats: Vec<ParamVector> = updates.iter().filter_map(|u| u.v_hat.clone()).collect();
        let v_variance = if v_hats.is_empty() {
            0.0
        } else {
            v_cross_client_variance(&v_hats)?
        };
        let (bytes_up, bytes_down) = self.cfg.payload_bytes(self.task.dim(), self.partition.num_blocks());
        let metrics = RoundMetrics {
            round: r,
            loss,
            grad_norm_sq: grad.norm_sq(),
            drift,
            v_variance,
            eta: self.eta(r),
            bytes_up,
            bytes_down,
            wall_clock_secs: start.elapsed().as_secs_f64(),
        };
        Ok((next, metrics))
    }

    /// Runs all rounds, calling `observe(previous, next, metrics)` after each.
    pub fn run_observed(
        &self,
        mut observe: impl FnMut(&ServerState, &ServerState, &RoundMetrics),
    ) -> Result<(ServerState, Vec<RoundMetrics>)> {
        let mut state = self.initial_state();
        let mut metrics = Vec::with_capacity(self.cfg.rounds);
        for _ in 0..self.cfg.rounds {
            let (next, m) = self.step(&state)?;
            observe(&state, &next, &m);
            metrics.push(m);
            state = next;
        }
        Ok((state, metrics))
    }

    pub fn run(&self) -> Result<(ServerState, Vec<RoundMetrics>)> {
        self.run_observed(|_, _, _| {})
    }
}

/// Runs `cfg` on `task` and returns the per-round metrics.
pub fn run(cfg: &RunConfig, task: &dyn Task, jobs: usize) -> Result<Vec<RoundMetrics>> {
    Ok(Federation::new(cfg, task, jobs)?.run()?.1)
}

fn run_as(cfg: &RunConfig, task: &dyn Task, jobs: usize, algorithm: Algorithm) -> Result<Vec<RoundMetrics>> {
    run(&RunConfig { algorithm, ..cfg.clone() }, task, jobs)
}

/// Local SGD with server averaging.
pub fn run_baseline_fedavg(cfg: &RunConfig, task: &dyn Task, jobs: usize) -> Result<Vec<RoundMetrics>> {
    run_as(cfg, task, jobs, Algorithm::Fedavg)
}

/// Local SGD corrected by control variates.
pub fn run_baseline_scaffold(cfg: &RunConfig, task: &dyn Task, jobs: usize) -> Result<Vec<RoundMetrics>> {
    run_as(cfg, task, jobs, Algorithm::Scaffold)
}

/// Local SGD mixing the gradient with the global update estimate
/// (`optim.alpha` is the mixing weight).
pub fn run_baseline_fedcm(cfg: &RunConfig, task: &dyn Task, jobs: usize) -> Result<Vec<RoundMetrics>> {
    run_as(cfg, task, jobs, Algorithm::Fedcm)
}
