//! Theory calculators and diagnostics.
//!
//! - [`theoretical_rate`]: the non-convex convergence bound
//!   `sqrt(L D s^2 / (S K R eps^2)) + L D / R`.
//! - [`pac_bayes_bound`]: the generalization bound as a function of the
//!   Hessian spectrum and the weight decay.
//! - [`stationary_covariance`] / [`empirical_stationary_covariance`]: the
//!   stationary covariance `(eta / 2b) U (S^1/2 + lambda)^-1 U^T` of the
//!   linearized, preconditioned dynamics and a Monte-Carlo check of it.
//! - [`drift_metric`] / [`v_cross_client_variance`]: per-round diagnostics.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamVector;

/// Largest matrix dimension accepted by the covariance routines.
pub const MAX_ANALYSIS_DIM: usize = 512;

fn positive(name: &str, x: f64) -> Result<()> {
    if !(x.is_finite() && x > 0.0) {
        return Err(Error::Domain(format!("{name} must be positive and finite (got {x})")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateInputs {
    /// Smoothness constant.
    pub l: f64,
    /// Initial suboptimality `f(x0) - f*`.
    pub delta: f64,
    pub sigma_l: f64,
    pub s: f64,
    pub k: f64,
    pub r: f64,
    pub eps: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateTerms {
    /// Noise term `sqrt(L D s^2 / (S K R eps^2))`.
    pub noise: f64,
    /// Optimization term `L D / R`.
    pub optimization: f64,
    pub total: f64,
}

/// Two-term convergence bound. `sigma_l` may be zero; everything else must be
/// positive.
pub fn theoretical_rate(inp: &RateInputs) -> Result<RateTerms> {
    for (name, x) in [
        ("L", inp.l),
        ("Delta", inp.delta),
        ("S", inp.s),
        ("K", inp.k),
        ("R", inp.r),
        ("eps", inp.eps),
    ] {
        positive(name, x)?;
    }
    if !(inp.sigma_l.is_finite() && inp.sigma_l >= 0.0) {
        return Err(Error::Domain(format!("sigma_l must be >= 0 (got {})", inp.sigma_l)));
    }
    let ld = inp.l * inp.delta;
    let noise = (ld * inp.sigma_l * inp.sigma_l / (inp.s * inp.k * inp.r * inp.eps * inp.eps)).sqrt();
    let optimization = ld / inp.r;
    Ok(RateTerms {
        noise,
        optimization,
        total: noise + optimization,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PacInputs {
    /// Hessian eigenvalues at the solution.
    pub sigmas: Vec<f64>,
    pub lambda: f64,
    pub eta: f64,
    /// Prior variance.
    pub rho: f64,
    /// Batch size.
    pub b: f64,
    /// Training-set size.
    pub n: f64,
    /// Failure probability.
    pub tau: f64,
    pub xstar_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PacTerms {
    /// `sum_i ln(2 rho b (sqrt(s_i) + lambda) / eta)`.
    pub log_term: f64,
    /// `eta / (2 rho b) * sum_i 1 / (sqrt(s_i) + lambda)`.
    pub trace_term: f64,
    /// `|x*|^2 / (2 rho) - d / 2 + 2 ln(2 n / tau)`.
    pub constant: f64,
    pub bracket: f64,
    pub bound: f64,
}

/// PAC-Bayes generalization bound `sqrt(8 / n) * sqrt(bracket)`.
///
/// A negative bracket means the bound is vacuous at these inputs and is
/// reported as a domain error.
pub fn pac_bayes_bound(inp: &PacInputs) -> Result<PacTerms> {
    if inp.sigmas.is_empty() {
        return Err(Error::Domain("sigmas must be non-empty".into()));
    }
    positive("eta", inp.eta)?;
    positive("rho", inp.rho)?;
    if !(inp.b.is_finite() && inp.b >= 1.0) {
        return Err(Error::Domain(format!("b must be >= 1 (got {})", inp.b)));
    }
    if !(inp.n.is_finite() && inp.n >= 1.0) {
        return Err(Error::Domain(format!("n must be >= 1 (got {})", inp.n)));
    }
    if !(inp.tau > 0.0 && inp.tau < 1.0) {
        return Err(Error::Domain(format!("tau must lie in (0, 1) (got {})", inp.tau)));
    }
    if !(inp.lambda.is_finite() && inp.lambda >= 0.0) {
        return Err(Error::Domain(format!("lambda must be >= 0 (got {})", inp.lambda)));
    }
    if !(inp.xstar_norm.is_finite() && inp.xstar_norm >= 0.0) {
        return Err(Error::Domain(format!("xstar_norm must be >= 0 (got {})", inp.xstar_norm)));
    }
    let scale = 2.0 * inp.rho * inp.b;
    let mut log_term = 0.0;
    let mut inv_sum = 0.0;
    for (i, &s) in inp.sigmas.iter().enumerate() {
        if !(s.is_finite() && s >= 0.0) {
            return Err(Error::Domain(format!("sigma[{i}] must be >= 0 (got {s})")));
        }
        let c = s.sqrt() + inp.lambda;
        if c <= 0.0 {
            return Err(Error::Domain(format!(
                "sqrt(sigma[{i}]) + lambda is zero; the log term is undefined"
            )));
        }
        log_term += (scale * c / inp.eta).ln();
        inv_sum += 1.0 / c;
    }
    let trace_term = inp.eta / scale * inv_sum;
    let d = inp.sigmas.len() as f64;
    let constant = inp.xstar_norm * inp.xstar_norm / (2.0 * inp.rho) - d / 2.0 + 2.0 * (2.0 * inp.n / inp.tau).ln();
    let bracket = log_term + trace_term + constant;
    if bracket < 0.0 {
        return Err(Error::Domain(format!(
            "bound is vacuous at these inputs: bracketed term is {bracket} < 0"
        )));
    }
    Ok(PacTerms {
        log_term,
        trace_term,
        constant,
        bracket,
        bound: (8.0 / inp.n).sqrt() * bracket.sqrt(),
    })
}

/// Eigenpairs of a symmetric matrix after checking symmetry to `1e-12`
/// relative.
fn symmetric_eigen(h: &DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    if !h.is_square() || h.nrows() == 0 {
        return Err(Error::Domain(format!("H must be square and non-empty (got {}x{})", h.nrows(), h.ncols())));
    }
    if h.nrows() > MAX_ANALYSIS_DIM {
        return Err(Error::Domain(format!("dimension {} exceeds {MAX_ANALYSIS_DIM}", h.nrows())));
    }
    if h.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("H".into()));
    }
    let scale = h.amax().max(f64::MIN_POSITIVE);
    let asym = (h - h.transpose()).amax();
    if asym > 1e-12 * scale {
        return Err(Error::Singular(format!("H is not symmetric (max asymmetry {asym:e})")));
    }
    Ok(SymmetricEigen::new(h.clone()))
}

/// Eigenvalues below this (relative to the largest) are treated as zero.
const PSD_TOL: f64 = 1e-12;

/// `M = (eta / 2b) U (S^1/2 + lambda I)^-1 U^T` for `H = U S U^T`.
pub fn stationary_covariance(h: &DMatrix<f64>, eta: f64, b: f64, lambda: f64) -> Result<DMatrix<f64>> {
    positive("eta", eta)?;
    positive("b", b)?;
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::Domain(format!("lambda must be >= 0 (got {lambda})")));
    }
    let eig = symmetric_eigen(h)?;
    let top = eig.eigenvalues.amax();
    let mut diag = DVector::zeros(h.nrows());
    for (i, &s) in eig.eigenvalues.iter().enumerate() {
        if s < -PSD_TOL * top.max(1.0) {
            return Err(Error::Domain(format!("H is not positive semi-definite (eigenvalue {s})")));
        }
        let c = s.max(0.0).sqrt() + lambda;
        if c <= 0.0 || (lambda == 0.0 && s <= PSD_TOL * top) {
            return Err(Error::Singular(format!(
                "sqrt(sigma_{i}) + lambda vanishes (sigma = {s}, lambda = {lambda})"
            )));
        }
        diag[i] = eta / (2.0 * b) / c;
    }
    let u = &eig.eigenvectors;
    let m = u * DMatrix::from_diagonal(&diag) * u.transpose();
    Ok((&m + m.transpose()) * 0.5)
}

/// `||U S U^T - H||_F / ||H||_F` for the decomposition used above.
pub fn eigen_residual(h: &DMatrix<f64>) -> Result<f64> {
    let eig = symmetric_eigen(h)?;
    let recon = eig.recompose();
    Ok((recon - h).norm() / h.norm().max(f64::MIN_POSITIVE))
}

/// Preconditioner used by the Monte-Carlo check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreconditionerMode {
    /// Fixed `H^{-1/2}`.
    #[default]
    Frozen,
    /// `1 / (sqrt(v_hat) + eps)` from a running second moment of the noisy
    /// gradient (`beta2 = 0.999`, `eps = 1e-8`). Exploratory only.
    Live,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OuConfig {
    pub eta: f64,
    pub b: f64,
    pub lambda: f64,
    pub steps: usize,
    pub burn_in: usize,
    /// Multiplies the injected noise; 0 gives a deterministic contraction.
    #[serde(default = "one")]
    pub noise_scale: f64,
    #[serde(default)]
    pub mode: PreconditionerMode,
}

fn one() -> f64 {
    1.0
}

/// Sample covariance of the preconditioned linear dynamics
///
/// ```text
/// x <- x - eta * (P H x + lambda x) + eta * P u,   u ~ N(0, H / b)
/// ```
///
/// with `P = H^{-1/2}`, started at zero, over the iterates after `burn_in`.
/// The linear map must be a contraction (spectral radius < 1).
pub fn empirical_stationary_covariance(h: &DMatrix<f64>, cfg: &OuConfig, rng: &mut ChaCha8Rng) -> Result<DMatrix<f64>> {
    positive("eta", cfg.eta)?;
    positive("b", cfg.b)?;
    if !(cfg.lambda.is_finite() && cfg.lambda >= 0.0) {
        return Err(Error::Domain(format!("lambda must be >= 0 (got {})", cfg.lambda)));
    }
    if cfg.steps <= cfg.burn_in + 1 {
        return Err(Error::Domain("steps must exceed burn_in + 1".into()));
    }
    let d = h.nrows();
    let eig = symmetric_eigen(h)?;
    let top = eig.eigenvalues.amax();
    if eig.eigenvalues.iter().any(|&s| s <= PSD_TOL * top.max(1.0)) {
        return Err(Error::Singular("H must be positive definite for the H^-1/2 preconditioner".into()));
    }
    let u = &eig.eigenvectors;
    let sqrt_s = eig.eigenvalues.map(f64::sqrt);
    let inv_sqrt_h = u * DMatrix::from_diagonal(&sqrt_s.map(|s| 1.0 / s)) * u.transpose();
    // noise factor: eta * H^{-1/2} * (H / b)^{1/2} z = (eta / sqrt(b)) z
    let noise_h = u * DMatrix::from_diagonal(&sqrt_s) * u.transpose() / cfg.b.sqrt();

    // frozen map: I - eta (H^{1/2} + lambda I); eigenvalues 1 - eta (sqrt(s) + lambda)
    let radius = sqrt_s
        .iter()
        .map(|&s| (1.0 - cfg.eta * (s + cfg.lambda)).abs())
        .fold(0.0, f64::max);
    if radius >= 1.0 {
        return Err(Error::Unstable { spectral_radius: radius });
    }

    let mut x = DVector::<f64>::zeros(d);
    let mut v = DVector::<f64>::zeros(d);
    let (beta2, eps) = (0.999_f64, 1e-8);
    let mut mean = DVector::<f64>::zeros(d);
    let mut scatter = DMatrix::<f64>::zeros(d, d);
    let mut count = 0.0;
    for step in 0..cfg.steps {
        let z = DVector::from_fn(d, |_, _| StandardNormal.sample(rng));
        let u_noise = &noise_h * z * cfg.noise_scale;
        let direction = match cfg.mode {
            PreconditionerMode::Frozen => &inv_sqrt_h * (h * &x + &u_noise),
            PreconditionerMode::Live => {
                let g = h * &x + &u_noise;
                v = &v * beta2 + g.component_mul(&g) * (1.0 - beta2);
                let corr = 1.0 - beta2.powi((step + 1).min(i32::MAX as usize) as i32);
                let theta = v.map(|vj| 1.0 / ((vj / corr).sqrt() + eps));
                g.component_mul(&theta)
            }
        };
        x = &x - (direction + &x * cfg.lambda) * cfg.eta;
        if x.iter().any(|xj| !xj.is_finite()) {
            return Err(Error::NonFinite(format!("simulated iterate at step {step}")));
        }
        if step >= cfg.burn_in {
            // Welford update of mean and scatter
            count += 1.0;
            let dx = &x - &mean;
            mean += &dx / count;
            let dx2 = &x - &mean;
            scatter += &dx * dx2.transpose();
        }
    }
    let cov = scatter / (count - 1.0);
    Ok((&cov + cov.transpose()) * 0.5)
}

/// `(1/S) sum_i ||x_i - mean||`.
pub fn drift_metric(points: &[ParamVector]) -> Result<f64> {
    let mean = mean_of(points)?;
    let mut total = 0.0;
    for p in points {
        total += p.sub(&mean)?.norm();
    }
    Ok(total / points.len() as f64)
}

/// Population variance across clients of each coordinate, averaged over
/// coordinates.
pub fn v_cross_client_variance(vs: &[ParamVector]) -> Result<f64> {
    let mean = mean_of(vs)?;
    let n = vs.len() as f64;
    let d = mean.len();
    if d == 0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for j in 0..d {
        let var: f64 = vs.iter().map(|v| (v[j] - mean[j]).powi(2)).sum::<f64>() / n;
        total += var;
    }
    Ok(total / d as f64)
}

fn mean_of(points: &[ParamVector]) -> Result<ParamVector> {
    let first = points
        .first()
        .ok_or_else(|| Error::Precondition("need at least one vector".into()))?;
    let mut acc = vec![0.0; first.len()];
    for p in points {
        p.ensure_len(first.len())?;
        for (a, x) in acc.iter_mut().zip(p.iter()) {
            *a += x;
        }
    }
    let n = points.len() as f64;
    ParamVector::from_vec(acc.into_iter().map(|a| a / n).collect())
}
