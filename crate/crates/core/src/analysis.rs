//! Measurements used by the convergence and generalization checks.

use serde::{Deserialize, Serialize};

use crate::coeffs::{check_nsq, GammaWeights};
use crate::data::Dataset;
use crate::error::{invalid, Error, Result};
use crate::objectives::PerSampleObjective;
use crate::optimizers::{full_batch_descent, DescentResult, DescentStop};
use crate::ordered_loss::lq_value_and_subgradient;

/// Settings for the proximal subproblem behind [`moreau_grad_norm`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MoreauConfig {
    /// Must exceed the weak-convexity modulus of `L_q`.
    pub rho_hat: f64,
    /// Stop once an inner step moves `β` by less than this. Steps shrink
    /// like `1/√k`, so the error in `β*` is a small multiple of the tolerance.
    pub inner_tol: f64,
    pub inner_max_iter: usize,
    /// First inner step size; `1/(2ρ̂)` when absent.
    #[serde(default)]
    pub inner_lr: Option<f64>,
}

impl Default for MoreauConfig {
    fn default() -> Self {
        MoreauConfig {
            rho_hat: 10.0,
            inner_tol: 1e-8,
            inner_max_iter: 1_000_000,
            inner_lr: None,
        }
    }
}

impl MoreauConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho_hat > 0.0 && self.rho_hat.is_finite()) {
            return Err(invalid(format!("rho_hat must be positive, got {}", self.rho_hat)));
        }
        if !(self.inner_tol > 0.0) {
            return Err(invalid(format!("inner_tol must be positive, got {}", self.inner_tol)));
        }
        if self.inner_max_iter == 0 {
            return Err(invalid("inner_max_iter must be positive"));
        }
        if let Some(lr) = self.inner_lr {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(invalid(format!("inner_lr must be positive, got {lr}")));
            }
        }
        Ok(())
    }

    fn lr(&self) -> f64 {
        self.inner_lr.unwrap_or(0.5 / self.rho_hat)
    }
}

/// Solves `min_β f(β) + (ρ̂/2)‖β − θ‖²` for a `(value, subgradient)` oracle
/// `f` and returns `ρ̂‖θ − β*‖`, the gradient norm of the Moreau envelope of
/// `f` with parameter `1/ρ̂`.
pub fn moreau_grad_norm_with<F>(mut f: F, theta: &[f64], cfg: &MoreauConfig) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    cfg.validate()?;
    let rho = cfg.rho_hat;
    let prox = |beta: &[f64]| -> Result<(f64, Vec<f64>)> {
        let (v, mut g) = f(beta)?;
        let mut sq = 0.0;
        for ((gi, b), t) in g.iter_mut().zip(beta).zip(theta) {
            let d = b - t;
            *gi += rho * d;
            sq += d * d;
        }
        Ok((v + 0.5 * rho * sq, g))
    };
    let stop = DescentStop {
        max_iter: cfg.inner_max_iter,
        step_tol: cfg.inner_tol,
        grad_tol: 0.0,
    };
    let res = full_batch_descent(prox, theta.to_vec(), cfg.lr(), stop)?;
    if !res.converged {
        return Err(Error::Convergence {
            iterations: res.iterations,
            last_step: res.last_step,
            tolerance: cfg.inner_tol,
        });
    }
    let dist = res
        .last_x
        .iter()
        .zip(theta)
        .map(|(b, t)| (b - t) * (b - t))
        .sum::<f64>()
        .sqrt();
    Ok(rho * dist)
}

/// Moreau-envelope gradient norm of `L_q` at `θ`.
pub fn moreau_grad_norm(
    obj: &PerSampleObjective,
    theta: &[f64],
    data: &Dataset,
    gamma: &GammaWeights,
    cfg: &MoreauConfig,
) -> Result<f64> {
    moreau_grad_norm_with(
        |beta| lq_value_and_subgradient(obj, beta, data, gamma),
        theta,
        cfg,
    )
}

/// Reference minimizer of `L_q` by full-batch subgradient descent with step
/// `lr/√(k+1)`, run for `max_iter` steps or until the subgradient norm falls
/// below `grad_tol`. `best_value` is an upper bound on `min L_q`; a small
/// `last_grad_norm` certifies it for smooth, convex instances.
pub fn theta_star_oracle(
    obj: &PerSampleObjective,
    data: &Dataset,
    gamma: &GammaWeights,
    theta0: Vec<f64>,
    lr: f64,
    max_iter: usize,
    grad_tol: f64,
) -> Result<DescentResult> {
    let stop = DescentStop {
        max_iter,
        step_tol: 0.0,
        grad_tol,
    };
    full_batch_descent(|beta| lq_value_and_subgradient(obj, beta, data, gamma), theta0, lr, stop)
}

/// Running minimum of `history[t] − star`.
pub fn optimality_gap(history: &[f64], star: f64) -> Vec<f64> {
    let mut best = f64::INFINITY;
    history
        .iter()
        .map(|&v| {
            best = best.min(v - star);
            best
        })
        .collect()
}

/// `(M s / q) √(ln(1/δ) / 2n)`.
pub fn concentration_term(m: f64, s: usize, q: usize, n: usize, delta: f64) -> Result<f64> {
    check_nsq(n, s, q)?;
    if !(m >= 0.0 && m.is_finite()) {
        return Err(invalid(format!("M must be nonnegative, got {m}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid(format!("delta must lie in (0, 1), got {delta}")));
    }
    Ok(m * s as f64 / q as f64 * ((1.0 / delta).ln() / (2.0 * n as f64)).sqrt())
}

/// Percentage of misclassified examples. Prediction ties go to the smaller
/// class index.
pub fn zero_one_error(obj: &PerSampleObjective, theta: &[f64], data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(invalid("zero-one error of an empty data set"));
    }
    let wrong = (0..data.len())
        .filter(|&i| obj.predict(theta, data.x(i)) != data.y(i))
        .count();
    Ok(100.0 * wrong as f64 / data.len() as f64)
}

/// `100 (e_sgd − e_osgd) / e_sgd`, `None` when `e_sgd = 0`.
pub fn relative_improvement(err_sgd: f64, err_osgd: f64) -> Option<f64> {
    (err_sgd != 0.0).then(|| 100.0 * (err_sgd - err_osgd) / err_sgd)
}
