//! Seeded, platform-independent randomness.
//!
//! Every randomized step in the pipeline (example shuffling, synthetic
//! fixtures) draws from [`SeededRng`] so that a run is reproducible from
//! its configured seed alone. The generator is ChaCha8 seeded from a
//! `u64`, with an explicitly fixed Fisher–Yates shuffle and rejection
//! sampling for bounded draws — none of it depends on process state,
//! pointer values, or platform word size.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// Deterministic random source. Two instances built from the same seed
/// produce identical streams on every platform.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng { seed, inner: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// The seed this generator was built from.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// A child generator whose seed mixes this generator's seed with a
    /// label (e.g. a query id). Independent of draw order, so per-query
    /// streams stay stable however work is scheduled across threads.
    #[must_use]
    pub fn derive(&self, label: &str) -> SeededRng {
        SeededRng::new(splitmix64(self.seed ^ fnv1a64(label.as_bytes())))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform draw in `[0, bound)` via rejection sampling (no modulo bias).
    pub fn below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "below() requires a positive bound");
        // Largest multiple of `bound` that fits in u64; values at or above
        // it would bias the low residues, so they are rejected.
        let zone = u64::MAX - u64::MAX % bound;
        loop {
            let v = self.next_u64();
            if v < zone {
                return v % bound;
            }
        }
    }

    /// In-place Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}

/// 64-bit FNV-1a over raw bytes; stable across platforms and releases
/// (unlike the standard library's `DefaultHasher`).
fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// One splitmix64 mixing step, used to spread derived seeds apart.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}
