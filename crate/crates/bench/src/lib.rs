//! Fixtures shared by the criterion benchmarks in `benches/`.

use std::sync::Arc;

use mnl_lab::model::{uniform_assortment_sample, ChoiceRecord, ContextSet};
use mnl_lab::rng::{stream, Stream};
use rand::Rng;

/// `n` Gaussian-ish feature vectors of dimension `dim`, deterministic in `seed`.
pub fn random_context(n: usize, dim: usize, seed: u64) -> ContextSet {
    let mut rng = stream(seed, Stream::Contexts);
    let items = (0..n)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    ContextSet::new(items, 1).expect("well-formed context")
}

pub fn random_vector(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = stream(seed, Stream::Init);
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// `rounds` choice records over uniformly random assortments.
pub fn random_records(rounds: usize, n: usize, capacity: usize, dim: usize, seed: u64) -> Vec<ChoiceRecord> {
    let mut rng = stream(seed, Stream::Choices);
    (0..rounds)
        .map(|t| {
            let ctx = Arc::new(random_context(n, dim, seed + t as u64));
            let s = uniform_assortment_sample(n, capacity, &mut rng).expect("valid capacity");
            let chosen = rng.random_range(0..=s.len()).checked_sub(1).map(|p| s.items()[p]);
            ChoiceRecord::new(ctx, s, chosen).expect("consistent record")
        })
        .collect()
}
