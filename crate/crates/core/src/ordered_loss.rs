//! The ordered empirical loss
//!
//! ```text
//! L_q(θ) = (1/q) Σ_j γ_j L_(j)(θ) + R(θ)
//! ```
//!
//! where `L_(1) ≥ L_(2) ≥ …` are the per-sample losses in rank order, its
//! subgradient, and a brute-force expectation of the ordered-SGD step over
//! every possible mini-batch.
//!
//! The brute-force oracle only equals [`lq_subgradient`] when the per-sample
//! losses at `θ` are pairwise distinct: with ties, the index tie rule decides
//! selection while the rank-weighted sum does not care which tied sample
//! gets which weight, and their gradients generally differ.

use itertools::Itertools;

use crate::coeffs::{check_nsq, GammaWeights};
use crate::data::Dataset;
use crate::error::{invalid, Error, Result};
use crate::objectives::PerSampleObjective;
use crate::selection::{q_argmax, rank_by_loss, BatchIndices, RankPermutation};

/// Largest number of mini-batches [`expected_step_bruteforce`] will
/// enumerate.
pub const BRUTEFORCE_LIMIT: u128 = 100_000;

/// Per-sample losses at some `θ`, their rank order and `R(θ)`.
#[derive(Debug, Clone)]
pub struct LossProfile {
    pub per_sample: Vec<f64>,
    pub rank: RankPermutation,
    pub reg_value: f64,
}

impl LossProfile {
    pub fn from_losses(per_sample: Vec<f64>, reg_value: f64) -> Result<Self> {
        if per_sample.is_empty() {
            return Err(invalid("loss profile needs at least one sample"));
        }
        let rank = rank_by_loss(&per_sample)?;
        Ok(LossProfile {
            per_sample,
            rank,
            reg_value,
        })
    }

    pub fn evaluate(obj: &PerSampleObjective, theta: &[f64], data: &Dataset) -> Result<Self> {
        let losses = (0..data.len())
            .map(|i| obj.per_sample_loss(theta, &data.example(i)))
            .collect::<Result<Vec<_>>>()?;
        LossProfile::from_losses(losses, obj.regularizer(theta).0)
    }

    pub fn len(&self) -> usize {
        self.per_sample.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_sample.is_empty()
    }

    pub fn has_distinct_losses(&self) -> bool {
        self.rank
            .order()
            .windows(2)
            .all(|w| self.per_sample[w[0]] != self.per_sample[w[1]])
    }
}

/// `L(θ) = (1/n) Σ_i L_i(θ) + R(θ)`.
pub fn average_empirical_loss(profile: &LossProfile) -> f64 {
    profile.per_sample.iter().sum::<f64>() / profile.len() as f64 + profile.reg_value
}

fn check_weights(n: usize, gamma: &GammaWeights) -> Result<()> {
    if gamma.n() != n {
        return Err(invalid(format!(
            "weights built for n={} applied to {n} samples",
            gamma.n()
        )));
    }
    Ok(())
}

/// `L_q(θ) = (1/q) Σ_j γ_j L_(j)(θ) + R(θ)`.
pub fn ordered_empirical_loss(profile: &LossProfile, gamma: &GammaWeights) -> Result<f64> {
    check_weights(profile.len(), gamma)?;
    let weighted: f64 = profile
        .rank
        .order()
        .iter()
        .zip(gamma.approx())
        .map(|(&i, &g)| g * profile.per_sample[i])
        .sum();
    Ok(weighted / gamma.q() as f64 + profile.reg_value)
}

/// Convenience: `L_q` straight from `(objective, θ, data)`.
pub fn ordered_loss_value(
    obj: &PerSampleObjective,
    theta: &[f64],
    data: &Dataset,
    gamma: &GammaWeights,
) -> Result<f64> {
    ordered_empirical_loss(&LossProfile::evaluate(obj, theta, data)?, gamma)
}

/// `(1/q) Σ_j γ_j g_(j) + ∇R(θ)`, a subgradient of `L_q` at `θ`.
pub fn lq_subgradient(
    obj: &PerSampleObjective,
    theta: &[f64],
    data: &Dataset,
    gamma: &GammaWeights,
) -> Result<Vec<f64>> {
    Ok(lq_value_and_subgradient(obj, theta, data, gamma)?.1)
}

/// `L_q(θ)` together with [`lq_subgradient`], sharing one loss evaluation.
pub fn lq_value_and_subgradient(
    obj: &PerSampleObjective,
    theta: &[f64],
    data: &Dataset,
    gamma: &GammaWeights,
) -> Result<(f64, Vec<f64>)> {
    check_weights(data.len(), gamma)?;
    let profile = LossProfile::evaluate(obj, theta, data)?;
    let value = ordered_empirical_loss(&profile, gamma)?;
    let mut grad = vec![0.0; obj.dim()];
    let inv_q = 1.0 / gamma.q() as f64;
    for (&i, &g) in profile.rank.order().iter().zip(gamma.approx()) {
        if g != 0.0 {
            obj.accumulate_grad(theta, &data.example(i), g * inv_q, &mut grad)?;
        }
    }
    let (_, reg) = obj.regularizer(theta);
    grad.iter_mut().zip(reg).for_each(|(a, b)| *a += b);
    Ok((value, grad))
}

/// `C(n, s)` saturating at `u128::MAX`.
pub fn batch_count(n: usize, s: usize) -> u128 {
    if s > n {
        return 0;
    }
    let k = s.min(n - s);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = match acc.checked_mul((n - i) as u128) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    acc
}

/// How often each sample lands in the top-`q` set, over all `C(n, s)`
/// mini-batches, for fixed per-sample values.
pub fn selection_counts(values: &[f64], s: usize, q: usize) -> Result<Vec<u64>> {
    let n = values.len();
    check_nsq(n, s, q)?;
    let total = batch_count(n, s);
    if total > BRUTEFORCE_LIMIT {
        return Err(Error::Resource(format!(
            "C({n}, {s}) = {total} mini-batches exceeds the enumeration limit {BRUTEFORCE_LIMIT}"
        )));
    }
    let mut counts = vec![0u64; n];
    for combo in (0..n).combinations(s) {
        let batch = BatchIndices::new(combo, n)?;
        for i in q_argmax(values, &batch, q)? {
            counts[i] += 1;
        }
    }
    Ok(counts)
}

/// Exact expectation of the ordered-SGD direction over a uniformly drawn
/// batch: the average over every `s`-subset `S` of
/// `(1/q) Σ_{i ∈ top-q(S)} g_i + ∇R`.
///
/// Selection counts are integers, so the result does not depend on the
/// enumeration order.
pub fn expected_step_bruteforce(
    obj: &PerSampleObjective,
    theta: &[f64],
    data: &Dataset,
    s: usize,
    q: usize,
) -> Result<Vec<f64>> {
    let profile = LossProfile::evaluate(obj, theta, data)?;
    let counts = selection_counts(&profile.per_sample, s, q)?;
    let total = batch_count(data.len(), s) as f64;
    let mut grad = vec![0.0; obj.dim()];
    for (i, &c) in counts.iter().enumerate() {
        if c > 0 {
            obj.accumulate_grad(theta, &data.example(i), c as f64 / total / q as f64, &mut grad)?;
        }
    }
    let (_, reg) = obj.regularizer(theta);
    grad.iter_mut().zip(reg).for_each(|(a, b)| *a += b);
    Ok(grad)
}
