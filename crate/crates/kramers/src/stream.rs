//! Deterministic random-stream derivation.
//!
//! Every stochastic task in the crate draws from a ChaCha8 stream keyed by
//! (master seed, domain label, task index). Parallel sections hand task `i`
//! its own stream and reduce results in index order, so output is a pure
//! function of the master seed no matter how many workers run or how the
//! scheduler interleaves them.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// 64-bit FNV-1a hash; also used for report provenance fingerprints.
pub fn fnv64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Derive the stream for task `index` of the given `domain`.
pub fn rng_for(seed: u64, domain: &str, index: u64) -> ChaCha8Rng {
    let mut state = seed ^ fnv64(domain.as_bytes()).rotate_left(17) ^ index.wrapping_mul(0x9E3779B97F4A7C15);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
