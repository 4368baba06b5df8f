//! Seeded fixtures shared by the benchmarks.

use osgd::data::Dataset;
use osgd::selection::{seeded_rng, stream, BatchIndices};
use rand::Rng as _;

/// Uniform losses for a batch covering `0..s`.
pub fn loss_batch(s: usize, seed: u64) -> (Vec<f64>, BatchIndices) {
    let mut rng = seeded_rng(seed, stream::VERIFY);
    let values = (0..s).map(|_| rng.random_range(0.0..5.0)).collect();
    (values, BatchIndices::full(s))
}

/// Dense random classification data, `n` rows of width `d`.
pub fn dense_dataset(n: usize, d: usize, classes: usize, seed: u64) -> Dataset {
    let mut rng = seeded_rng(seed, stream::DATA);
    let features = (0..n * d).map(|_| rng.random_range(0.0..1.0)).collect();
    let labels = (0..n).map(|_| rng.random_range(0..classes)).collect();
    Dataset::new(features, d, labels, classes, "bench").expect("valid shapes")
}
