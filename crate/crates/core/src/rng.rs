//! Seeded Gaussian streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type PathRng = ChaCha8Rng;

pub fn path_rng(seed: u64) -> PathRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `n` independent standard normals from the stream labelled `seed`.
pub fn standard_normals(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = path_rng(seed);
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}
