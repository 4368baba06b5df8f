//! Ordered SGD: mini-batch SGD that updates on the `q` largest losses of each
//! batch, together with the exact weights `γ_j` of the ordered empirical loss
//! it minimizes in expectation, brute-force oracles for that claim, and a
//! seeded experiment harness.
//!
//! Sample and rank indices are 0-based in the API; `γ_j` keeps its 1-based
//! rank index where documented.

// `!(x > 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod coeffs;
pub mod data;
pub mod error;
pub mod harness;
pub mod objectives;
pub mod optimizers;
pub mod ordered_loss;
pub mod selection;

pub use analysis::{
    concentration_term, moreau_grad_norm, optimality_gap, relative_improvement, theta_star_oracle, zero_one_error,
    MoreauConfig,
};
pub use coeffs::{beta_cdf, gamma_asymptotic, gamma_rescaled_curve, gamma_weights, gamma_weights_auto, GammaWeights};
pub use data::{Dataset, Split};
pub use error::{Error, Result};
pub use objectives::{Activation, Example, LossKind, ModelSpec, PerSampleObjective};
pub use optimizers::{
    adaptive_q_update, minibatch_sgd_step, ordered_adam_step, osgd_step, schedule_lr, OptimizerKind, OptimizerSpec,
    OptimizerState, QRule, ScheduleSpec,
};
pub use ordered_loss::{expected_step_bruteforce, lq_subgradient, ordered_empirical_loss, LossProfile};
pub use selection::{q_argmax, rank_by_loss, seeded_rng, BatchIndices, RankPermutation};
