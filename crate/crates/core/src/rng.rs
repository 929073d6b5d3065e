//! Deterministic RNG streams. Every consumer derives its generator from the
//! master seed plus a path of indices, so results never depend on which
//! thread evaluates what.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Independent stream for `(master, path...)`.
pub fn stream(master: u64, path: &[u64]) -> ChaCha8Rng {
    let id = path
        .iter()
        .fold(0x5EED_u64, |acc, &p| splitmix(acc ^ splitmix(p)));
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(id);
    rng
}

/// A child seed for `(master, path...)`, for APIs that take a plain seed.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix(master), |acc, &p| splitmix(acc ^ splitmix(p)))
}

/// Domain labels keep streams for different purposes apart.
pub mod domain {
    pub const LHS: u64 = 1;
    pub const GAUSSIAN: u64 = 2;
    pub const OBSERVATION: u64 = 3;
    pub const KALMAN: u64 = 4;
    pub const VALIDATION: u64 = 5;
    pub const TRUTH: u64 = 6;
    pub const ITERATION: u64 = 7;
}
