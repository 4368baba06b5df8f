//! Mini-batch sampling and top-q selection.
//!
//! Sample indexes are 0-based. Ties in loss are broken toward the smaller
//! original index: if `L_a = L_b` and `a < b`, then `a` ranks ahead of `b`.

use std::cmp::Ordering;

use rand::seq::index;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Portable seeded generator used for every random draw in the crate.
pub type Rng = ChaCha8Rng;

/// Stream ids carved out of one run seed. Each consumer owns its own
/// ChaCha stream so that adding draws in one place never shifts another.
pub mod stream {
    pub const INIT: u64 = 0;
    pub const BATCHES: u64 = 1;
    pub const DATA: u64 = 2;
    pub const SPLIT: u64 = 3;
    pub const VERIFY: u64 = 4;
}

/// Generator for `(seed, stream)`; the same pair always yields the same
/// sequence on every platform.
pub fn seeded_rng(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A mini-batch: distinct sample indexes, sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchIndices(Vec<usize>);

impl BatchIndices {
    /// Sorts and validates `indices` against `n`.
    pub fn new(mut indices: Vec<usize>, n: usize) -> Result<Self> {
        indices.sort_unstable();
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(invalid("batch indexes must be distinct"));
        }
        if indices.last().is_some_and(|&i| i >= n) {
            return Err(invalid(format!("batch index out of range for n={n}")));
        }
        Ok(BatchIndices(indices))
    }

    /// The whole index range `0..n`.
    pub fn full(n: usize) -> Self {
        BatchIndices((0..n).collect())
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Uniform draw of an `s`-subset of `0..n` without replacement.
pub fn sample_minibatch(rng: &mut Rng, n: usize, s: usize) -> Result<BatchIndices> {
    if s == 0 || s > n {
        return Err(invalid(format!("need 1 <= s <= n, got n={n}, s={s}")));
    }
    let mut v = index::sample(rng, n, s).into_vec();
    v.sort_unstable();
    Ok(BatchIndices(v))
}

/// How mini-batches are produced over an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Batching {
    /// Shuffle once per epoch and cut consecutive batches; the final batch
    /// holds the remainder when `s` does not divide `n`.
    #[default]
    Shuffle,
    /// Independent uniform `s`-subsets, `⌈n/s⌉` per epoch.
    Iid,
}

/// Produces the batches for one epoch.
pub fn epoch_batches(rng: &mut Rng, n: usize, s: usize, mode: Batching) -> Result<Vec<BatchIndices>> {
    if s == 0 || s > n {
        return Err(invalid(format!("need 1 <= s <= n, got n={n}, s={s}")));
    }
    match mode {
        Batching::Shuffle => {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(rng);
            Ok(perm
                .chunks(s)
                .map(|c| {
                    let mut v = c.to_vec();
                    v.sort_unstable();
                    BatchIndices(v)
                })
                .collect())
        }
        Batching::Iid => (0..n.div_ceil(s)).map(|_| sample_minibatch(rng, n, s)).collect(),
    }
}

/// Higher value first; equal values by ascending index.
fn rank_order(values: &[f64], a: usize, b: usize) -> Ordering {
    values[b].total_cmp(&values[a]).then(a.cmp(&b))
}

/// The `q` batch members with largest values, as ascending indexes.
pub fn q_argmax(values: &[f64], batch: &BatchIndices, q: usize) -> Result<Vec<usize>> {
    if q == 0 || q > batch.len() {
        return Err(invalid(format!(
            "need 1 <= q <= |batch|, got q={q}, |batch|={}",
            batch.len()
        )));
    }
    if let Some(&i) = batch.as_slice().iter().find(|&&i| i >= values.len()) {
        return Err(invalid(format!("batch index {i} outside value vector of length {}", values.len())));
    }
    let mut idx = batch.as_slice().to_vec();
    if q < idx.len() {
        idx.select_nth_unstable_by(q - 1, |&a, &b| rank_order(values, a, b));
        idx.truncate(q);
    }
    idx.sort_unstable();
    Ok(idx)
}

/// Sample indexes in nonincreasing loss order with the index tie rule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankPermutation(Vec<usize>);

impl RankPermutation {
    pub fn order(&self) -> &[usize] {
        &self.0
    }
}

pub fn rank_by_loss(losses: &[f64]) -> Result<RankPermutation> {
    if let Some(i) = losses.iter().position(|l| l.is_nan()) {
        return Err(Error::Data(format!("NaN loss at sample {i}")));
    }
    let mut order: Vec<usize> = (0..losses.len()).collect();
    order.sort_unstable_by(|&a, &b| rank_order(losses, a, b));
    Ok(RankPermutation(order))
}
