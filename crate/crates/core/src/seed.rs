//! Seed derivation and seeded sampling helpers.
//!
//! All randomness in the crate flows through ChaCha8 streams so results are
//! stable across platforms and `rand` minor versions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent child seed from `seed` for the named purpose.
pub fn derive(seed: u64, stream: u64) -> u64 {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r.random()
}

/// Partial Fisher-Yates: after the call the first `k` items are a uniform
/// sample without replacement, in draw order.
pub fn partial_shuffle<T, R: Rng>(items: &mut [T], k: usize, rng: &mut R) {
    let n = items.len();
    for i in 0..k.min(n) {
        let j = rng.random_range(i..n);
        items.swap(i, j);
    }
}

pub fn shuffle<T, R: Rng>(items: &mut [T], rng: &mut R) {
    let n = items.len();
    partial_shuffle(items, n, rng);
}
