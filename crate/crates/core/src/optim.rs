//! Single-step update rules.
//!
//! All functions are pure: a [`MomentState`] goes in, a new one comes out.
//! Weight decay is decoupled, i.e. applied directly to the parameters as
//! `x' = x - eta * (direction + lambda * x)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{BlockPartition, ParamVector};

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

/// Hyperparameters of the local optimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimConfig {
    /// Local learning rate.
    pub eta: f64,
    /// Decoupled weight decay.
    #[serde(default)]
    pub lambda: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    /// Weight of the global update estimate in the local step.
    #[serde(default)]
    pub alpha: f64,
    /// Server learning rate of the simplified variant. `None` means `K * eta`,
    /// which reproduces plain delta averaging.
    #[serde(default)]
    pub gamma: Option<f64>,
    /// Elementwise gradient clip magnitude.
    #[serde(default)]
    pub grad_clip: Option<f64>,
    /// Apply `x - eta * (u - lambda * x)` exactly as printed in the original
    /// algorithm listing (weight growth) instead of decoupled decay.
    #[serde(default)]
    pub paper_literal_decay_sign: bool,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            eta: 1e-3,
            lambda: 0.0,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            alpha: 0.0,
            gamma: None,
            grad_clip: None,
            paper_literal_decay_sign: false,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: &str| Err(Error::Config(format!("optim.{field} {why}")));
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return bad("eta", "must be > 0");
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return bad("lambda", "must be >= 0");
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return bad("beta1", "must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return bad("beta2", "must lie in [0, 1)");
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return bad("eps", "must be > 0");
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad("alpha", "must lie in [0, 1]");
        }
        if let Some(g) = self.gamma {
            if !(g.is_finite() && g > 0.0) {
                return bad("gamma", "must be > 0");
            }
        }
        if let Some(c) = self.grad_clip {
            if !(c.is_finite() && c > 0.0) {
                return bad("grad_clip", "must be > 0");
            }
        }
        Ok(())
    }

    /// Copy with a different learning rate (used by schedules).
    pub fn with_eta(&self, eta: f64) -> Self {
        OptimConfig { eta, ..self.clone() }
    }
}

/// First/second moments plus step counters.
///
/// `k` is the local step within the current round. `t` counts the updates that
/// have been folded into `v` since it was last zero: with a warm-started `v` it
/// is `r * K + k`, otherwise it equals `k`. `m_history` plays the same role for
/// a warm-started `m` (zero when `m` starts from zero, which is the default).
#[derive(Debug, Clone, PartialEq)]
pub struct MomentState {
    pub m: ParamVector,
    pub v: ParamVector,
    pub k: u64,
    pub t: u64,
    pub m_history: u64,
}

impl MomentState {
    pub fn zeros(dim: usize) -> Self {
        MomentState {
            m: ParamVector::zeros(dim),
            v: ParamVector::zeros(dim),
            k: 0,
            t: 0,
            m_history: 0,
        }
    }

    /// State at the start of a round. `v_history` / `m_history` are the number
    /// of steps already accumulated into the supplied `v` / `m`.
    pub fn start_round(
        m: ParamVector,
        v: ParamVector,
        m_history: u64,
        v_history: u64,
    ) -> Result<Self> {
        m.ensure_len(v.len())?;
        if v.iter().any(|&x| x < 0.0) {
            return Err(Error::Precondition("second moment must be nonnegative".into()));
        }
        Ok(MomentState {
            m,
            v,
            k: 0,
            t: v_history,
            m_history,
        })
    }

    pub fn dim(&self) -> usize {
        self.m.len()
    }
}

/// `beta^n` as `exp(n ln beta)`; underflows cleanly to 0 for large `n`.
fn decay_power(beta: f64, n: u64) -> f64 {
    if n == 0 {
        return 1.0;
    }
    (n as f64 * beta.ln()).exp()
}

/// `m' = b1 m + (1 - b1) g`, `v' = b2 v + (1 - b2) g*g`, advancing `k` and `t`.
pub fn moment_update(state: MomentState, g: &ParamVector, cfg: &OptimConfig) -> Result<MomentState> {
    g.ensure_len(state.dim())?;
    g.check_finite("gradient")?;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let m = state.m.zip_map(g, |m, g| b1 * m + (1.0 - b1) * g)?;
    let v = state.v.zip_map(g, |v, g| b2 * v + (1.0 - b2) * g * g)?;
    Ok(MomentState {
        m,
        v,
        k: state.k + 1,
        t: state.t + 1,
        m_history: state.m_history,
    })
}

/// Bias-corrected moments `m / (1 - b1^k)` and `v / (1 - b2^t)`.
pub fn bias_correct(state: &MomentState, cfg: &OptimConfig) -> Result<(ParamVector, ParamVector)> {
    if state.k == 0 || state.t == 0 {
        return Err(Error::Precondition(format!(
            "bias correction needs k >= 1 and t >= 1 (k = {}, t = {})",
            state.k, state.t
        )));
    }
    let m_scale = 1.0 - decay_power(cfg.beta1, state.m_history + state.k);
    let v_scale = 1.0 - decay_power(cfg.beta2, state.t);
    Ok((state.m.map(|m| m / m_scale)?, state.v.map(|v| v / v_scale)?))
}

/// `1 / (sqrt(v_hat) + eps)` elementwise.
pub fn preconditioner(v_hat: &ParamVector, cfg: &OptimConfig) -> Result<ParamVector> {
    if let Some(j) = v_hat.iter().position(|&x| x < 0.0) {
        return Err(Error::Precondition(format!(
            "negative second moment {} at index {j}",
            v_hat[j]
        )));
    }
    v_hat.map(|v| 1.0 / (v.sqrt() + cfg.eps))
}

/// Elementwise clip to `[-clip, clip]` when `cfg.grad_clip` is set.
pub fn clip_gradient(g: ParamVector, cfg: &OptimConfig) -> ParamVector {
    match cfg.grad_clip {
        Some(c) => ParamVector::from_vec(g.iter().map(|x| x.clamp(-c, c)).collect())
            .expect("clipping keeps entries finite"),
        None => g,
    }
}

/// Per-coordinate weight-decay switch. Coordinates in excluded blocks are
/// never decayed.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayMask(Vec<bool>);

impl DecayMask {
    /// Excludes every block whose name equals an entry of `excluded` or starts
    /// with `"{entry}."` (so a tensor name excludes all of its sub-blocks).
    pub fn from_partition(partition: &BlockPartition, excluded: &[String]) -> Self {
        let mut mask = vec![true; partition.dim()];
        for block in partition.blocks() {
            let hit = excluded.iter().any(|e| {
                block.name == *e
                    || block
                        .name
                        .strip_prefix(e.as_str())
                        .is_some_and(|rest| rest.starts_with('.'))
            });
            if hit {
                mask[block.range.clone()].fill(false);
            }
        }
        DecayMask(mask)
    }

    pub fn decays(&self, j: usize) -> bool {
        self.0[j]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `x' = x - eta * (direction + lambda * x)` with the decay optionally masked.
fn decoupled_update(
    x: &ParamVector,
    direction: &[f64],
    cfg: &OptimConfig,
    mask: Option<&DecayMask>,
) -> Result<ParamVector> {
    x.ensure_len(direction.len())?;
    if let Some(mask) = mask {
        if mask.len() != x.len() {
            return Err(Error::LengthMismatch {
                expected: x.len(),
                found: mask.len(),
            });
        }
    }
    let lambda = if cfg.paper_literal_decay_sign { -cfg.lambda } else { cfg.lambda };
    let out = x
        .iter()
        .zip(direction)
        .enumerate()
        .map(|(j, (&xj, &dj))| {
            let decay = match mask {
                Some(m) if !m.decays(j) => 0.0,
                _ => lambda * xj,
            };
            xj - cfg.eta * (dj + decay)
        })
        .collect();
    ParamVector::from_vec(out)
}

fn preconditioned(m_hat: &ParamVector, v_hat: &ParamVector, cfg: &OptimConfig) -> Result<Vec<f64>> {
    let theta = preconditioner(v_hat, cfg)?;
    Ok(m_hat.zip_map(&theta, |m, th| m * th)?.into_vec())
}

/// AdamW: `x' = x - eta * (m_hat / (sqrt(v_hat) + eps) + lambda * x)`.
pub fn adamw_step(
    x: &ParamVector,
    m_hat: &ParamVector,
    v_hat: &ParamVector,
    cfg: &OptimConfig,
    mask: Option<&DecayMask>,
) -> Result<ParamVector> {
    let dir = preconditioned(m_hat, v_hat, cfg)?;
    decoupled_update(x, &dir, cfg, mask)
}

/// Drift-corrected local step:
/// `x' = x - eta * (m_hat * theta + alpha * delta_g + lambda * x)`.
pub fn fedadamw_local_step(
    x: &ParamVector,
    m_hat: &ParamVector,
    v_hat: &ParamVector,
    delta_g: &ParamVector,
    cfg: &OptimConfig,
    mask: Option<&DecayMask>,
) -> Result<ParamVector> {
    delta_g.ensure_len(x.len())?;
    let mut dir = preconditioned(m_hat, v_hat, cfg)?;
    for (d, &dg) in dir.iter_mut().zip(delta_g.iter()) {
        *d += cfg.alpha * dg;
    }
    decoupled_update(x, &dir, cfg, mask)
}

/// Simplified analysis step (no first moment, no decay):
/// `x' = x - eta * (alpha * g * theta + (1 - alpha) * delta_g)`.
pub fn simplified_local_step(
    x: &ParamVector,
    g: &ParamVector,
    v_hat: &ParamVector,
    delta_g: &ParamVector,
    cfg: &OptimConfig,
) -> Result<ParamVector> {
    ensure_simplified(cfg)?;
    x.ensure_len(g.len())?;
    delta_g.ensure_len(x.len())?;
    let theta = preconditioner(v_hat, cfg)?;
    let out = x
        .iter()
        .zip(g.iter())
        .zip(theta.iter())
        .zip(delta_g.iter())
        .map(|(((&xj, &gj), &th), &dg)| xj - cfg.eta * (cfg.alpha * gj * th + (1.0 - cfg.alpha) * dg))
        .collect();
    ParamVector::from_vec(out)
}

pub(crate) fn ensure_simplified(cfg: &OptimConfig) -> Result<()> {
    if cfg.lambda != 0.0 || cfg.beta1 != 0.0 {
        return Err(Error::Config(format!(
            "the simplified variant requires lambda = 0 and beta1 = 0 (got lambda = {}, beta1 = {})",
            cfg.lambda, cfg.beta1
        )));
    }
    Ok(())
}

/// Plain SGD direction with decoupled decay: `x' = x - eta * (d + lambda * x)`.
pub fn sgd_step(
    x: &ParamVector,
    direction: &ParamVector,
    cfg: &OptimConfig,
    mask: Option<&DecayMask>,
) -> Result<ParamVector> {
    decoupled_update(x, direction, cfg, mask)
}
