//! Synthetic objectives with exact gradient oracles.
//!
//! Every task is a federated objective `f(x) = (1/N) sum_i f_i(x)`. Clients
//! draw stochastic gradients through [`Task::loss_and_grad`] using a random
//! stream supplied by the caller, which keeps runs replayable regardless of
//! scheduling.

mod attention;
mod data;
mod mlp;
mod quadratic;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{ParamVector, Purpose, SeedSpec, SERVER};
use crate::partition::TensorMeta;

pub use attention::AttentionModel;
pub use data::{
    dirichlet_partition, load_csv, synthetic_clusters, synthetic_token_sequences, DataTask, Dataset,
    DirichletPartition, LogisticModel, Model,
};
pub use mlp::MlpModel;
pub use quadratic::{global_optimum, QuadraticConfig, QuadraticTask};

/// Logistic regression over a labelled sample set.
pub type LogisticTask = DataTask<LogisticModel>;
/// One-hidden-layer tanh MLP classifier.
pub type MlpTask = DataTask<MlpModel>;
/// Multi-head self-attention block with mean pooling and a linear head.
pub type TinyAttentionTask = DataTask<AttentionModel>;

pub trait Task: Send + Sync {
    fn dim(&self) -> usize;

    fn num_clients(&self) -> usize;

    /// Tensor layout, in parameter order, covering all `dim()` parameters.
    fn layout(&self) -> Vec<TensorMeta>;

    fn initial_params(&self) -> ParamVector;

    /// Samples moved to clients that the data split left empty.
    fn empty_client_repairs(&self) -> usize {
        0
    }

    /// Step for central-difference checks of this task's gradient.
    fn fd_step(&self) -> f64 {
        FD_STEP
    }

    /// Stochastic loss and gradient of client `client` at `x`.
    fn loss_and_grad(&self, x: &ParamVector, client: usize, rng: &mut ChaCha8Rng) -> Result<(f64, ParamVector)>;

    /// Exact (full-batch, noise-free) loss and gradient of client `client`.
    fn client_loss_and_grad(&self, x: &ParamVector, client: usize) -> Result<(f64, ParamVector)>;

    /// Exact loss and gradient of the global objective, averaged uniformly
    /// over clients in ascending id order.
    fn global_loss_and_grad(&self, x: &ParamVector) -> Result<(f64, ParamVector)> {
        let n = self.num_clients();
        let mut loss = 0.0;
        let mut grad = vec![0.0; self.dim()];
        for i in 0..n {
            let (l, g) = self.client_loss_and_grad(x, i)?;
            loss += l;
            for (acc, gj) in grad.iter_mut().zip(g.iter()) {
                *acc += gj;
            }
        }
        let scale = 1.0 / n as f64;
        grad.iter_mut().for_each(|g| *g *= scale);
        Ok((loss * scale, ParamVector::from_vec(grad)?))
    }
}

pub(crate) fn check_dim(x: &ParamVector, dim: usize) -> Result<()> {
    x.ensure_len(dim)
}

pub(crate) fn check_client(client: usize, n: usize) -> Result<()> {
    if client >= n {
        return Err(Error::Config(format!("client id {client} out of range (N = {n})")));
    }
    Ok(())
}

/// Outcome of a central-difference gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteDiffReport {
    pub max_rel_error: f64,
    pub coordinates: Vec<usize>,
    pub passed: bool,
}

/// Default step used by [`finite_diff_check`].
pub const FD_STEP: f64 = 1e-5;
/// Number of coordinates probed by [`finite_diff_check`].
pub const FD_COORDS: usize = 32;
/// Magnitude floor in the relative-error denominator; keeps coordinates whose
/// true derivative is ~0 from dominating the score.
pub const FD_FLOOR: f64 = 1e-6;

/// Compares the exact gradient of `client` at `x` with central differences on
/// 32 random coordinates (all coordinates when `dim <= 32`).
///
/// The error for a coordinate is `|g - fd| / max(|g|, |fd|, FD_FLOOR)`.
pub fn finite_diff_check(
    task: &dyn Task,
    x: &ParamVector,
    client: usize,
    tol: f64,
    rng: &mut ChaCha8Rng,
) -> Result<FiniteDiffReport> {
    let dim = task.dim();
    check_dim(x, dim)?;
    let (_, grad) = task.client_loss_and_grad(x, client)?;
    let coordinates: Vec<usize> = if dim <= FD_COORDS {
        (0..dim).collect()
    } else {
        rand::seq::index::sample(rng, dim, FD_COORDS).into_vec()
    };
    let h = task.fd_step();
    let mut worst = 0.0_f64;
    let mut probe = x.clone().into_vec();
    for &j in &coordinates {
        let orig = probe[j];
        probe[j] = orig + h;
        let (plus, _) = task.client_loss_and_grad(&ParamVector::from_vec(probe.clone())?, client)?;
        probe[j] = orig - h;
        let (minus, _) = task.client_loss_and_grad(&ParamVector::from_vec(probe.clone())?, client)?;
        probe[j] = orig;
        let fd = (plus - minus) / (2.0 * h);
        let denom = grad[j].abs().max(fd.abs()).max(FD_FLOOR);
        worst = worst.max((grad[j] - fd).abs() / denom);
    }
    Ok(FiniteDiffReport {
        max_rel_error: worst,
        coordinates,
        passed: worst <= tol,
    })
}

/// `max_i ||grad f_i(x) - grad f(x)||`: the empirical gradient-dissimilarity
/// constant at `x`.
pub fn gradient_dissimilarity(task: &dyn Task, x: &ParamVector) -> Result<f64> {
    let (_, global) = task.global_loss_and_grad(x)?;
    let mut worst = 0.0_f64;
    for i in 0..task.num_clients() {
        let (_, g) = task.client_loss_and_grad(x, i)?;
        worst = worst.max(g.sub(&global)?.norm());
    }
    Ok(worst)
}

/// Uniform random point in `[-scale, scale]^d` (for probing oracles).
pub fn random_point(dim: usize, scale: f64, rng: &mut ChaCha8Rng) -> ParamVector {
    ParamVector::from_vec((0..dim).map(|_| rng.random_range(-scale..=scale)).collect())
        .expect("bounded draws are finite")
}

fn default_clients() -> usize {
    10
}
fn default_dirichlet() -> f64 {
    0.6
}
fn default_samples() -> usize {
    100
}

/// Declarative task description used by run configurations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskSpec {
    Quadratic(QuadraticConfig),
    Logistic {
        #[serde(default = "default_clients")]
        clients: usize,
        features: usize,
        classes: usize,
        #[serde(default = "default_samples")]
        samples_per_class: usize,
        #[serde(default = "default_dirichlet")]
        dirichlet_alpha: f64,
        #[serde(default)]
        batch_size: Option<usize>,
    },
    Mlp {
        #[serde(default = "default_clients")]
        clients: usize,
        features: usize,
        hidden: usize,
        classes: usize,
        #[serde(default = "default_samples")]
        samples_per_class: usize,
        #[serde(default = "default_dirichlet")]
        dirichlet_alpha: f64,
        #[serde(default)]
        batch_size: Option<usize>,
    },
    Attention {
        #[serde(default = "default_clients")]
        clients: usize,
        /// Vocabulary size; also the number of classes.
        tokens: usize,
        seq_len: usize,
        embed_dim: usize,
        heads: usize,
        #[serde(default = "default_samples")]
        samples_per_class: usize,
        #[serde(default = "default_dirichlet")]
        dirichlet_alpha: f64,
        #[serde(default)]
        batch_size: Option<usize>,
    },
    /// Rows of `features..., label` read from a CSV file, fit with logistic
    /// regression (`hidden = None`) or an MLP.
    Csv {
        path: String,
        #[serde(default = "default_clients")]
        clients: usize,
        #[serde(default)]
        hidden: Option<usize>,
        #[serde(default = "default_dirichlet")]
        dirichlet_alpha: f64,
        #[serde(default)]
        batch_size: Option<usize>,
    },
}

impl TaskSpec {
    pub fn num_clients(&self) -> usize {
        match self {
            TaskSpec::Quadratic(c) => c.clients,
            TaskSpec::Logistic { clients, .. }
            | TaskSpec::Mlp { clients, .. }
            | TaskSpec::Attention { clients, .. }
            | TaskSpec::Csv { clients, .. } => *clients,
        }
    }

    /// Instantiates the task. All randomness comes from `seed`.
    pub fn build(&self, seed: &SeedSpec) -> Result<Box<dyn Task>> {
        let mut init = seed.rng(0, SERVER, Purpose::TaskInit);
        let mut split = seed.rng(0, SERVER, Purpose::DataPartition);
        Ok(match self {
            TaskSpec::Quadratic(cfg) => Box::new(QuadraticTask::generate(cfg, &mut init)?),
            TaskSpec::Logistic {
                clients,
                features,
                classes,
                samples_per_class,
                dirichlet_alpha,
                batch_size,
            } => {
                let data = synthetic_clusters(*features, *classes, *samples_per_class, 1.0, &mut init)?;
                let model = LogisticModel::new(*features, *classes)?;
                Box::new(DataTask::new(model, data, *clients, *dirichlet_alpha, *batch_size, &mut init, &mut split)?)
            }
            TaskSpec::Mlp {
                clients,
                features,
                hidden,
                classes,
                samples_per_class,
                dirichlet_alpha,
                batch_size,
            } => {
                let data = synthetic_clusters(*features, *classes, *samples_per_class, 1.0, &mut init)?;
                let model = MlpModel::new(*features, *hidden, *classes)?;
                Box::new(DataTask::new(model, data, *clients, *dirichlet_alpha, *batch_size, &mut init, &mut split)?)
            }
            TaskSpec::Attention {
                clients,
                tokens,
                seq_len,
                embed_dim,
                heads,
                samples_per_class,
                dirichlet_alpha,
                batch_size,
            } => {
                let data = synthetic_token_sequences(*tokens, *seq_len, *samples_per_class, &mut init)?;
                let model = AttentionModel::new(*tokens, *seq_len, *embed_dim, *heads)?;
                Box::new(DataTask::new(model, data, *clients, *dirichlet_alpha, *batch_size, &mut init, &mut split)?)
            }
            TaskSpec::Csv {
                path,
                clients,
                hidden,
                dirichlet_alpha,
                batch_size,
            } => {
                let data = load_csv(std::path::Path::new(path))?;
                let features = data.inputs[0].len();
                match hidden {
                    None => {
                        let model = LogisticModel::new(features, data.num_classes)?;
                        Box::new(DataTask::new(model, data, *clients, *dirichlet_alpha, *batch_size, &mut init, &mut split)?)
                    }
                    Some(h) => {
                        let model = MlpModel::new(features, *h, data.num_classes)?;
                        Box::new(DataTask::new(model, data, *clients, *dirichlet_alpha, *batch_size, &mut init, &mut split)?)
                    }
                }
            }
        })
    }
}
