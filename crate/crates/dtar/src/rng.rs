//! Deterministic seed derivation.
//!
//! Every stochastic component (traffic noise, fault process, genetic
//! operators, policy sampling, evaluation episodes) owns its own
//! [`ChaCha8Rng`] stream derived from the master seed, so parallel execution
//! and replay cannot change results.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; good avalanche for combining seed material.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a master seed and a stream tag.
pub fn derive_seed(master: u64, tag: u64) -> u64 {
    mix(mix(master) ^ mix(tag.wrapping_mul(0xa076_1d64_78bd_642f)))
}

/// Derive a child seed from a master seed and two stream tags.
pub fn derive_seed2(master: u64, tag_a: u64, tag_b: u64) -> u64 {
    derive_seed(derive_seed(master, tag_a), tag_b)
}

/// Build the rng for a derived stream.
pub fn stream_rng(master: u64, tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, tag))
}

/// Build the rng for a doubly-derived stream (e.g. scenario x episode).
pub fn stream_rng2(master: u64, tag_a: u64, tag_b: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed2(master, tag_a, tag_b))
}

/// FNV-1a accumulator used for episode trace hashes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceHash(u64);

impl TraceHash {
    pub fn new() -> Self {
        TraceHash(0xcbf2_9ce4_8422_2325)
    }

    pub fn mix_u64(&mut self, v: u64) {
        let mut h = self.0;
        for byte in v.to_le_bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        self.0 = h;
    }

    pub fn mix_f64(&mut self, v: f64) {
        self.mix_u64(v.to_bits());
    }

    pub fn value(&self) -> u64 {
        self.0
    }
}

impl Default for TraceHash {
    fn default() -> Self {
        Self::new()
    }
}
