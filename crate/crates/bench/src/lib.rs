//! Seeded inputs for the kernel benchmarks.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_points(n: usize, seed: u64) -> Vec<(f64, f64)> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (r.random_range(-1.0..1.0), r.random_range(-1.0..1.0))).collect()
}

pub fn random_costs(n: usize, m: usize, seed: u64) -> Array2<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((n, m), |_| r.random_range(0.0..1.0))
}
