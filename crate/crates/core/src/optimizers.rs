//! Ordered SGD and its baselines.
//!
//! One step of ordered SGD evaluates every loss in the mini-batch `S`, keeps
//! the top-`q` set `Q`, and moves along `g̃ = (1/q) Σ_{i∈Q} g_i + ∇R(θ)`.
//! Mini-batch SGD is the `q = |S|` case; ordered Adam feeds the same `g̃` to
//! Adam. Momentum and Adam are empirical extensions: the unbiasedness and
//! convergence guarantees only cover plain steps.
//!
//! Momentum is heavy-ball without dampening: `v ← μv + g̃`, `θ ← θ − ηv`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{invalid, Error, Result};
use crate::objectives::PerSampleObjective;
use crate::selection::{q_argmax, BatchIndices, Batching};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    /// Ordered SGD.
    Osgd,
    /// Mini-batch SGD.
    Sgd,
    /// Ordered Adam.
    Oadam,
    Adam,
}

impl OptimizerKind {
    pub fn is_ordered(self) -> bool {
        matches!(self, OptimizerKind::Osgd | OptimizerKind::Oadam)
    }

    pub fn is_adam(self) -> bool {
        matches!(self, OptimizerKind::Oadam | OptimizerKind::Adam)
    }

    /// The non-ordered method with the same update rule.
    pub fn baseline(self) -> Self {
        if self.is_adam() {
            OptimizerKind::Adam
        } else {
            OptimizerKind::Sgd
        }
    }
}

/// How `q` is chosen: a fixed count, or the accuracy-driven rule of
/// [`adaptive_q_update`]. Serialized as `"adaptive"` or `"fixed:<k>"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum QRule {
    Adaptive,
    Fixed(usize),
}

impl FromStr for QRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "adaptive" => Ok(QRule::Adaptive),
            other => other
                .strip_prefix("fixed:")
                .and_then(|k| k.trim().parse::<usize>().ok())
                .filter(|&k| k > 0)
                .map(QRule::Fixed)
                .ok_or_else(|| Error::Config(format!("q must be \"adaptive\" or \"fixed:<k>\" with k >= 1, got {other:?}"))),
        }
    }
}

impl TryFrom<String> for QRule {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<QRule> for String {
    fn from(q: QRule) -> String {
        q.to_string()
    }
}

impl fmt::Display for QRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QRule::Adaptive => f.write_str("adaptive"),
            QRule::Fixed(k) => write!(f, "fixed:{k}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    StepDecay,
    InverseSqrt,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub kind: ScheduleKind,
    #[serde(default)]
    pub base_lr: f64,
    /// 1-based epochs at whose start the rate is multiplied by `decay_factor`.
    #[serde(default)]
    pub decay_epochs: Vec<usize>,
    #[serde(default = "default_decay_factor")]
    pub decay_factor: f64,
}

fn default_decay_factor() -> f64 {
    0.1
}

impl ScheduleSpec {
    pub fn constant(base_lr: f64) -> Self {
        ScheduleSpec {
            kind: ScheduleKind::Constant,
            base_lr,
            decay_epochs: Vec::new(),
            decay_factor: 1.0,
        }
    }

    pub fn inverse_sqrt(base_lr: f64) -> Self {
        ScheduleSpec {
            kind: ScheduleKind::InverseSqrt,
            ..ScheduleSpec::constant(base_lr)
        }
    }

    pub fn step_decay(base_lr: f64, decay_epochs: Vec<usize>, decay_factor: f64) -> Self {
        ScheduleSpec {
            kind: ScheduleKind::StepDecay,
            base_lr,
            decay_epochs,
            decay_factor,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(invalid(format!("base learning rate must be positive, got {}", self.base_lr)));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(invalid(format!("decay factor must lie in (0, 1], got {}", self.decay_factor)));
        }
        Ok(())
    }
}

/// Learning rate for a 1-based `epoch` and 0-based global `step`.
///
/// * step-decay: `base · factor^{#{d ∈ decay_epochs : epoch ≥ d}}`
/// * inverse-sqrt: `base / √(step + 1)`
/// * constant: `base`
pub fn schedule_lr(spec: &ScheduleSpec, epoch: usize, step: u64) -> f64 {
    match spec.kind {
        ScheduleKind::Constant => spec.base_lr,
        ScheduleKind::InverseSqrt => spec.base_lr / ((step + 1) as f64).sqrt(),
        ScheduleKind::StepDecay => {
            let passed = spec.decay_epochs.iter().filter(|&&d| epoch >= d).count();
            spec.base_lr * spec.decay_factor.powi(passed as i32)
        }
    }
}

/// `q` from the current training accuracy: `s` below 80 %, then `⌊s/2⌋`,
/// `⌊s/4⌋`, `⌊s/8⌋`, `⌊s/16⌋` from 80, 90, 95 and 99.5 %, never below 1.
pub fn adaptive_q_update(train_acc: f64, s: usize) -> usize {
    let divisor = if train_acc >= 0.995 {
        16
    } else if train_acc >= 0.95 {
        8
    } else if train_acc >= 0.90 {
        4
    } else if train_acc >= 0.80 {
        2
    } else {
        1
    };
    (s / divisor).max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamMoments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

/// Parameters plus method-specific buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub theta: Vec<f64>,
    pub momentum_buf: Option<Vec<f64>>,
    pub adam: Option<AdamMoments>,
    pub q_current: usize,
    pub lr_current: f64,
    /// Completed steps.
    pub steps: u64,
}

impl OptimizerState {
    pub fn new(theta: Vec<f64>, q: usize, lr: f64) -> Self {
        OptimizerState {
            theta,
            momentum_buf: None,
            adam: None,
            q_current: q,
            lr_current: lr,
            steps: 0,
        }
    }
}

/// Per-sample losses of the batch members, in batch order.
fn batch_losses(
    obj: &PerSampleObjective,
    theta: &[f64],
    data: &Dataset,
    batch: &BatchIndices,
    step: u64,
) -> Result<Vec<f64>> {
    batch
        .as_slice()
        .iter()
        .map(|&i| {
            let l = obj.per_sample_loss(theta, &data.example(i))?;
            if l.is_finite() {
                Ok(l)
            } else {
                Err(Error::Diverged { step, value: l })
            }
        })
        .collect()
}

fn finish_direction(obj: &PerSampleObjective, theta: &[f64], mut sum: Vec<f64>, count: usize) -> Vec<f64> {
    let inv = 1.0 / count as f64;
    let l2 = obj.l2();
    for (g, t) in sum.iter_mut().zip(theta) {
        *g = *g * inv + l2 * t;
    }
    sum
}

/// `g̃ = (1/q) Σ_{i∈Q} g_i + ∇R(θ)` with `Q` the top-`q` members of `batch`.
/// `step` only labels a divergence error.
pub fn ordered_direction(
    obj: &PerSampleObjective,
    theta: &[f64],
    data: &Dataset,
    batch: &BatchIndices,
    q: usize,
    step: u64,
) -> Result<Vec<f64>> {
    let losses = batch_losses(obj, theta, data, batch, step)?;
    let local = BatchIndices::full(batch.len());
    let chosen = q_argmax(&losses, &local, q)?;
    let mut sum = vec![0.0; obj.dim()];
    for pos in chosen {
        obj.accumulate_grad(theta, &data.example(batch.as_slice()[pos]), 1.0, &mut sum)?;
    }
    Ok(finish_direction(obj, theta, sum, q))
}

/// `(1/|S|) Σ_{i∈S} g_i + ∇R(θ)`.
pub fn average_direction(
    obj: &PerSampleObjective,
    theta: &[f64],
    data: &Dataset,
    batch: &BatchIndices,
    step: u64,
) -> Result<Vec<f64>> {
    batch_losses(obj, theta, data, batch, step)?;
    let mut sum = vec![0.0; obj.dim()];
    for &i in batch.as_slice() {
        obj.accumulate_grad(theta, &data.example(i), 1.0, &mut sum)?;
    }
    Ok(finish_direction(obj, theta, sum, batch.len()))
}

/// Plain or heavy-ball step with the state's learning rate.
pub fn apply_sgd_update(state: &mut OptimizerState, direction: &[f64], momentum: f64) {
    let lr = state.lr_current;
    if momentum == 0.0 {
        for (t, g) in state.theta.iter_mut().zip(direction) {
            *t -= lr * g;
        }
    } else {
        let buf = state.momentum_buf.get_or_insert_with(|| vec![0.0; direction.len()]);
        for ((t, v), g) in state.theta.iter_mut().zip(buf.iter_mut()).zip(direction) {
            *v = momentum * *v + g;
            *t -= lr * *v;
        }
    }
    state.steps += 1;
}

/// Bias-corrected Adam step.
pub fn apply_adam_update(state: &mut OptimizerState, direction: &[f64], cfg: &AdamConfig) {
    let lr = state.lr_current;
    let moments = state.adam.get_or_insert_with(|| AdamMoments {
        m: vec![0.0; direction.len()],
        v: vec![0.0; direction.len()],
        t: 0,
    });
    moments.t += 1;
    let c1 = 1.0 - cfg.beta1.powi(moments.t as i32);
    let c2 = 1.0 - cfg.beta2.powi(moments.t as i32);
    for (((t, m), v), g) in state
        .theta
        .iter_mut()
        .zip(moments.m.iter_mut())
        .zip(moments.v.iter_mut())
        .zip(direction)
    {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *t -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    state.steps += 1;
}

/// One ordered-SGD step on `batch` keeping its top `q` samples.
pub fn osgd_step(
    state: &mut OptimizerState,
    obj: &PerSampleObjective,
    data: &Dataset,
    batch: &BatchIndices,
    q: usize,
    momentum: f64,
) -> Result<()> {
    let g = ordered_direction(obj, &state.theta, data, batch, q, state.steps + 1)?;
    apply_sgd_update(state, &g, momentum);
    Ok(())
}

/// One mini-batch SGD step on the average loss of `batch`.
pub fn minibatch_sgd_step(
    state: &mut OptimizerState,
    obj: &PerSampleObjective,
    data: &Dataset,
    batch: &BatchIndices,
    momentum: f64,
) -> Result<()> {
    let g = average_direction(obj, &state.theta, data, batch, state.steps + 1)?;
    apply_sgd_update(state, &g, momentum);
    Ok(())
}

/// Adam driven by the ordered direction.
pub fn ordered_adam_step(
    state: &mut OptimizerState,
    obj: &PerSampleObjective,
    data: &Dataset,
    batch: &BatchIndices,
    q: usize,
    cfg: &AdamConfig,
) -> Result<()> {
    let g = ordered_direction(obj, &state.theta, data, batch, q, state.steps + 1)?;
    apply_adam_update(state, &g, cfg);
    Ok(())
}

pub fn adam_step(
    state: &mut OptimizerState,
    obj: &PerSampleObjective,
    data: &Dataset,
    batch: &BatchIndices,
    cfg: &AdamConfig,
) -> Result<()> {
    let g = average_direction(obj, &state.theta, data, batch, state.steps + 1)?;
    apply_adam_update(state, &g, cfg);
    Ok(())
}

fn default_lr() -> f64 {
    0.01
}

fn default_momentum() -> f64 {
    0.9
}

fn default_batch_size() -> usize {
    64
}

fn default_schedule() -> ScheduleSpec {
    ScheduleSpec::step_decay(0.0, vec![10], 0.1)
}

/// Optimizer settings as they appear under `[opt]` in a run config.
/// Defaults: `s = 64`, `η = 0.01`, momentum 0.9, rate divided by 10 at
/// epoch 10, adaptive `q`, epoch-wise shuffling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSpec {
    pub kind: OptimizerKind,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_q")]
    pub q: QRule,
    /// `base_lr` is ignored here; `lr` is the base rate.
    #[serde(default = "default_schedule")]
    pub schedule: ScheduleSpec,
    #[serde(default)]
    pub batching: Batching,
    #[serde(default)]
    pub adam: AdamConfig,
}

fn default_q() -> QRule {
    QRule::Adaptive
}

impl OptimizerSpec {
    pub fn new(kind: OptimizerKind) -> Self {
        OptimizerSpec {
            kind,
            lr: default_lr(),
            momentum: default_momentum(),
            batch_size: default_batch_size(),
            q: default_q(),
            schedule: default_schedule(),
            batching: Batching::default(),
            adam: AdamConfig::default(),
        }
    }

    /// Schedule with `base_lr` taken from `lr`.
    pub fn effective_schedule(&self) -> ScheduleSpec {
        ScheduleSpec {
            base_lr: self.lr,
            ..self.schedule.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.effective_schedule().validate()?;
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(invalid(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch size must be positive"));
        }
        if let QRule::Fixed(k) = self.q {
            if k > self.batch_size {
                return Err(invalid(format!("fixed q={k} exceeds batch size {}", self.batch_size)));
            }
        }
        Ok(())
    }

    /// The `q` for the first epoch.
    pub fn initial_q(&self) -> usize {
        match self.q {
            QRule::Fixed(k) if self.kind.is_ordered() => k,
            _ => self.batch_size,
        }
    }

    /// One step of the configured method. `q` is capped at the batch length
    /// so a short final batch keeps `min(q, |S|)` samples.
    pub fn step(
        &self,
        state: &mut OptimizerState,
        obj: &PerSampleObjective,
        data: &Dataset,
        batch: &BatchIndices,
    ) -> Result<()> {
        let q = state.q_current.min(batch.len());
        match self.kind {
            OptimizerKind::Osgd => osgd_step(state, obj, data, batch, q, self.momentum),
            OptimizerKind::Sgd => minibatch_sgd_step(state, obj, data, batch, self.momentum),
            OptimizerKind::Oadam => ordered_adam_step(state, obj, data, batch, q, &self.adam),
            OptimizerKind::Adam => adam_step(state, obj, data, batch, &self.adam),
        }
    }
}

/// Outcome of [`full_batch_descent`].
#[derive(Debug, Clone)]
pub struct DescentResult {
    /// Best iterate seen.
    pub best_x: Vec<f64>,
    pub best_value: f64,
    /// Final iterate.
    pub last_x: Vec<f64>,
    pub iterations: usize,
    /// `‖x_k − x_{k−1}‖` of the last step taken.
    pub last_step: f64,
    /// Subgradient norm at the last evaluated point.
    pub last_grad_norm: f64,
    pub converged: bool,
}

/// Stopping rule for [`full_batch_descent`]. A zero tolerance disables that
/// test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DescentStop {
    pub max_iter: usize,
    /// Stop once a step moves the iterate by less than this.
    pub step_tol: f64,
    /// Stop once the subgradient norm drops below this.
    pub grad_tol: f64,
}

/// Deterministic subgradient descent `x ← x − (η₀/√(k+1)) g(x)` on a
/// function returning `(value, subgradient)`.
pub fn full_batch_descent<F>(mut f: F, x0: Vec<f64>, base_lr: f64, stop: DescentStop) -> Result<DescentResult>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let mut x = x0;
    let mut best_x = x.clone();
    let mut best_value = f64::INFINITY;
    let mut last_step = f64::INFINITY;
    let mut k = 0;
    let (last_grad_norm, converged) = loop {
        let (value, g) = f(&x)?;
        if !value.is_finite() {
            return Err(Error::Diverged { step: k as u64, value });
        }
        if value < best_value {
            best_value = value;
            best_x.clone_from(&x);
        }
        let grad_norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if grad_norm < stop.grad_tol || last_step < stop.step_tol {
            break (grad_norm, true);
        }
        if k == stop.max_iter {
            break (grad_norm, false);
        }
        let eta = base_lr / ((k + 1) as f64).sqrt();
        let mut sq = 0.0;
        for (xi, gi) in x.iter_mut().zip(&g) {
            let d = eta * gi;
            *xi -= d;
            sq += d * d;
        }
        last_step = sq.sqrt();
        k += 1;
    };
    Ok(DescentResult {
        best_x,
        best_value,
        last_x: x,
        iterations: k,
        last_step,
        last_grad_norm,
        converged,
    })
}
