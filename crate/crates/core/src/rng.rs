//! Counter-based random streams.
//!
//! Every random draw in the library comes from a ChaCha stream keyed by a
//! base seed and a short list of tags (purpose, iteration, chain index, ...).
//! A run's complete RNG state is therefore its seed plus its iteration
//! counter, which is what checkpoints persist.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Stream purposes.
pub mod tag {
    pub const INIT_ENERGY: u64 = 1;
    pub const INIT_GENERATOR: u64 = 2;
    pub const INIT_ENCODER: u64 = 3;
    pub const ITERATION: u64 = 10;
    pub const SHUFFLE: u64 = 11;
    pub const SAMPLER: u64 = 12;
    pub const ANCESTRAL: u64 = 13;
    pub const LANGEVIN: u64 = 14;
    pub const REPARAM: u64 = 15;
    pub const DATASET: u64 = 20;
    pub const EVAL: u64 = 30;
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Derives a child seed from `seed` and `tags`.
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(splitmix64(seed), |h, &t| {
        splitmix64(h ^ splitmix64(t.wrapping_add(0xA076_1D64_78BD_642F)))
    })
}

/// Independent random stream for `(seed, tags)`.
pub fn stream(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tags))
}

pub fn standard_normal<R: rand::Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

pub fn fill_standard_normal<R: rand::Rng + ?Sized>(rng: &mut R, out: &mut [f64]) {
    for v in out {
        *v = StandardNormal.sample(rng);
    }
}
