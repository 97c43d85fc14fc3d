//! Deterministic RNG substreams.
//!
//! Every random draw in the crate comes from a ChaCha stream keyed by a path of
//! integers rooted at a master seed, e.g. `(seed, CEM, mpc_step, iteration,
//! candidate)`. Results therefore do not depend on thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream tags. Distinct tags keep planning and ground-truth draws disjoint.
pub mod tag {
    pub const TRUTH_INIT: u64 = 1;
    pub const TRUTH_NOISE: u64 = 2;
    pub const PLANNING: u64 = 3;
    pub const CEM: u64 = 4;
    pub const MONTE_CARLO: u64 = 5;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a path of indices into a single 64-bit seed.
pub fn derive(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(master), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn stream(master: u64, path: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(derive(master, path))
}
