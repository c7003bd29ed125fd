//! Heterogeneous quadratic clients `f_i(x) = 1/2 (x - o_i)^T A_i (x - o_i)`.
//!
//! `A_i = Q diag(s_i) Q^T` shares one random rotation `Q`; the spectra `s_i`
//! are a log-spaced base spectrum with per-client multiplicative jitter that
//! grows with `sigma_g`, and the client optima `o_i = c + sigma_g u_i` sit at
//! distance `sigma_g` from a shared centre. `sigma_g = 0` makes every client
//! identical. Stochastic gradients add `N(0, sigma_l^2 / d)` noise per
//! coordinate, so `E||noise||^2 = sigma_l^2`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{check_client, check_dim, Task};
use crate::error::{Error, Result};
use crate::params::ParamVector;
use crate::partition::{TensorKind, TensorMeta};

fn default_mu() -> f64 {
    0.1
}
fn default_l() -> f64 {
    1.0
}
fn default_center() -> f64 {
    1.0
}
fn default_jitter() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticConfig {
    pub dim: usize,
    pub clients: usize,
    /// Displacement of client optima (and scale of spectral jitter).
    #[serde(default)]
    pub sigma_g: f64,
    /// Standard deviation of the gradient noise norm.
    #[serde(default)]
    pub sigma_l: f64,
    /// Smallest eigenvalue of the base spectrum.
    #[serde(default = "default_mu")]
    pub mu: f64,
    /// Largest eigenvalue of the base spectrum.
    #[serde(default = "default_l")]
    pub l_max: f64,
    /// Standard deviation of the shared optimum centre.
    #[serde(default = "default_center")]
    pub center_scale: f64,
    /// Maximum relative spectral jitter, reached as `sigma_g -> inf`.
    #[serde(default = "default_jitter")]
    pub max_jitter: f64,
    /// Number of parameter tensors the vector is split into for layout
    /// purposes (equal-size contiguous chunks).
    #[serde(default = "default_tensors")]
    pub tensors: usize,
}

fn default_tensors() -> usize {
    1
}

impl QuadraticConfig {
    pub fn new(dim: usize, clients: usize, sigma_g: f64, sigma_l: f64) -> Self {
        QuadraticConfig {
            dim,
            clients,
            sigma_g,
            sigma_l,
            mu: default_mu(),
            l_max: default_l(),
            center_scale: default_center(),
            max_jitter: default_jitter(),
            tensors: default_tensors(),
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |why: String| Err(Error::Config(format!("quadratic task: {why}")));
        if self.dim == 0 || self.clients == 0 {
            return bad("dim and clients must be >= 1".into());
        }
        if !(self.sigma_g >= 0.0 && self.sigma_l >= 0.0) {
            return bad("sigma_g and sigma_l must be >= 0".into());
        }
        if !(self.mu > 0.0 && self.l_max >= self.mu) {
            return bad(format!("need 0 < mu <= l_max (mu = {}, l_max = {})", self.mu, self.l_max));
        }
        if !(0.0..1.0).contains(&self.max_jitter) {
            return bad("max_jitter must lie in [0, 1)".into());
        }
        if self.tensors == 0 || self.tensors > self.dim {
            return bad(format!("tensors must lie in [1, {}]", self.dim));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct QuadraticTask {
    a: Vec<DMatrix<f64>>,
    b: Vec<DVector<f64>>,
    optima: Vec<DVector<f64>>,
    sigma_l: f64,
    tensors: usize,
}

impl QuadraticTask {
    /// Builds a task directly from client matrices and linear terms
    /// (`grad f_i(x) = A_i x - b_i`). Each `A_i` must be symmetric PSD; client
    /// optima are recovered by a least-squares solve.
    pub fn from_parts(a: Vec<DMatrix<f64>>, b: Vec<DVector<f64>>, sigma_l: f64) -> Result<Self> {
        if a.is_empty() || a.len() != b.len() {
            return Err(Error::Config("need one (A_i, b_i) pair per client".into()));
        }
        let d = b[0].len();
        let mut optima = Vec::with_capacity(a.len());
        for (ai, bi) in a.iter().zip(&b) {
            if ai.nrows() != d || ai.ncols() != d || bi.len() != d {
                return Err(Error::LengthMismatch {
                    expected: d,
                    found: ai.nrows().max(bi.len()),
                });
            }
            if (ai - ai.transpose()).amax() > 1e-12 * ai.amax().max(1.0) {
                return Err(Error::Config("client matrix is not symmetric".into()));
            }
            let o = ai
                .clone()
                .svd(true, true)
                .solve(bi, 1e-12)
                .map_err(|e| Error::Singular(e.to_string()))?;
            optima.push(o);
        }
        Ok(QuadraticTask {
            a,
            b,
            optima,
            sigma_l,
            tensors: 1,
        })
    }

    pub fn generate(cfg: &QuadraticConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.dim;
        let gaussian = DMatrix::<f64>::from_fn(d, d, |_, _| StandardNormal.sample(rng));
        let q = gaussian.qr().q();
        let base: Vec<f64> = (0..d)
            .map(|j| {
                if d == 1 {
                    cfg.l_max
                } else {
                    cfg.mu * (cfg.l_max / cfg.mu).powf(j as f64 / (d - 1) as f64)
                }
            })
            .collect();
        let jitter = cfg.max_jitter * cfg.sigma_g / (1.0 + cfg.sigma_g);
        let center = DVector::<f64>::from_fn(d, |_, _| {
            cfg.center_scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
        });

        let mut a = Vec::with_capacity(cfg.clients);
        let mut b = Vec::with_capacity(cfg.clients);
        let mut optima = Vec::with_capacity(cfg.clients);
        for _ in 0..cfg.clients {
            let spectrum = DVector::from_iterator(
                d,
                base.iter().map(|&s| s * (1.0 + jitter * rng.random_range(-1.0..=1.0))),
            );
            let ai = &q * DMatrix::from_diagonal(&spectrum) * q.transpose();
            let ai = (&ai + ai.transpose()) * 0.5;
            let dir = DVector::<f64>::from_fn(d, |_, _| StandardNormal.sample(rng));
            let norm = dir.norm();
            let offset = if norm > 0.0 { dir / norm } else { DVector::zeros(d) };
            let oi = &center + offset * cfg.sigma_g;
            b.push(&ai * &oi);
            a.push(ai);
            optima.push(oi);
        }
        Ok(QuadraticTask {
            a,
            b,
            optima,
            sigma_l: cfg.sigma_l,
            tensors: cfg.tensors,
        })
    }

    pub fn client_matrix(&self, i: usize) -> &DMatrix<f64> {
        &self.a[i]
    }

    pub fn client_linear(&self, i: usize) -> &DVector<f64> {
        &self.b[i]
    }

    pub fn client_optimum(&self, i: usize) -> ParamVector {
        ParamVector::from_vec(self.optima[i].iter().copied().collect()).expect("finite optimum")
    }

    pub fn sigma_l(&self) -> f64 {
        self.sigma_l
    }

    /// Largest eigenvalue over all client matrices (the smoothness constant).
    pub fn smoothness(&self) -> f64 {
        self.a
            .iter()
            .map(|a| a.clone().symmetric_eigenvalues().max())
            .fold(0.0, f64::max)
    }

    fn exact(&self, x: &ParamVector, client: usize) -> Result<(f64, DVector<f64>)> {
        check_dim(x, self.dim())?;
        check_client(client, self.num_clients())?;
        let xv = DVector::from_column_slice(x.as_slice());
        let ax = &self.a[client] * &xv;
        let grad = &ax - &self.b[client];
        let diff = &xv - &self.optima[client];
        let loss = 0.5 * diff.dot(&(&self.a[client] * &diff));
        Ok((loss, grad))
    }
}

impl Task for QuadraticTask {
    fn dim(&self) -> usize {
        self.b[0].len()
    }

    fn num_clients(&self) -> usize {
        self.a.len()
    }

    fn layout(&self) -> Vec<TensorMeta> {
        let d = self.dim();
        let base = d / self.tensors;
        let extra = d % self.tensors;
        (0..self.tensors)
            .map(|t| {
                let len = base + usize::from(t < extra);
                TensorMeta::new(format!("x.{t}"), TensorKind::Other, &[len])
            })
            .collect()
    }

    fn initial_params(&self) -> ParamVector {
        ParamVector::zeros(self.dim())
    }

    /// Central differences are exact on a quadratic for any step, so a wide
    /// step only shrinks rounding error.
    fn fd_step(&self) -> f64 {
        1e-2
    }

    fn loss_and_grad(&self, x: &ParamVector, client: usize, rng: &mut ChaCha8Rng) -> Result<(f64, ParamVector)> {
        let (loss, mut grad) = self.exact(x, client)?;
        if self.sigma_l > 0.0 {
            let sd = self.sigma_l / (self.dim() as f64).sqrt();
            for g in grad.iter_mut() {
                let z: f64 = StandardNormal.sample(rng);
                *g += sd * z;
            }
        }
        Ok((loss, ParamVector::from_vec(grad.iter().copied().collect())?))
    }

    fn client_loss_and_grad(&self, x: &ParamVector, client: usize) -> Result<(f64, ParamVector)> {
        let (loss, grad) = self.exact(x, client)?;
        Ok((loss, ParamVector::from_vec(grad.iter().copied().collect())?))
    }
}

/// Minimiser and minimum of `f = (1/N) sum_i f_i`: `x* = mean(A)^{-1} mean(b)`.
pub fn global_optimum(task: &QuadraticTask) -> Result<(ParamVector, f64)> {
    let n = task.num_clients() as f64;
    let d = task.dim();
    let mut a_bar = DMatrix::<f64>::zeros(d, d);
    let mut b_bar = DVector::<f64>::zeros(d);
    for (a, b) in task.a.iter().zip(&task.b) {
        a_bar += a;
        b_bar += b;
    }
    a_bar /= n;
    b_bar /= n;
    let x_star = match a_bar.clone().cholesky() {
        Some(ch) => ch.solve(&b_bar),
        None => a_bar.lu().solve(&b_bar).ok_or_else(|| {
            Error::Singular(
                "mean client matrix is not invertible; add a strongly convex term (increase mu)".into(),
            )
        })?,
    };
    let x_star = ParamVector::from_vec(x_star.iter().copied().collect())
        .map_err(|_| Error::Singular("mean client matrix is numerically singular".into()))?;
    let (f_star, _) = task.global_loss_and_grad(&x_star)?;
    Ok((x_star, f_star))
}
