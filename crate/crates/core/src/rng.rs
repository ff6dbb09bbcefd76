//! Portable seeded randomness.
//!
//! Every random decision in the toolkit goes through [`SeededRng`], a thin
//! wrapper over PCG-XSL-RR 128/64 (`rand_pcg::Pcg64`). The derived helpers
//! below are spelled out so a port in another language reproduces the same
//! draws bit for bit:
//!
//! * seeding: `Pcg64::seed_from_u64(seed)` (rand_core's PCG32 seed expansion)
//! * `unit()`: `(next_u64() >> 11) * 2^-53`, uniform on `[0, 1)`
//! * `below(n)`: `(next_u64() as u128 * n as u128) >> 64` (multiply-shift, no rejection)
//! * sub-seeds: [`derive_seed`], a SplitMix64 fold over the parts

use rand_core::{Rng, SeedableRng};
use rand_pcg::Pcg64;

/// Default seed for every generation process.
pub const DEFAULT_SEED: u64 = 42;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds `parts` into `base` with SplitMix64 so that sibling streams
/// (item 0, item 1, ...) are decorrelated.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(base.wrapping_add(GOLDEN_GAMMA)), |acc, &p| {
            splitmix64(acc ^ splitmix64(p.wrapping_add(GOLDEN_GAMMA)))
        })
}

/// Stable 64-bit key for a string, used when a seed must depend on a label.
pub fn string_key(s: &str) -> u64 {
    // FNV-1a
    s.bytes().fold(0xcbf2_9ce4_8422_2325_u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

#[derive(Debug, Clone)]
pub struct SeededRng {
    inner: Pcg64,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: Pcg64::seed_from_u64(seed),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on `[0, 1)` with 53 bits of precision.
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)`. `n` must be nonzero.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        ((u128::from(self.next_u64()) * u128::from(n)) >> 64) as u64
    }

    /// Uniform integer in the closed range `[lo, hi]`.
    pub fn range_inclusive(&mut self, lo: i64, hi: i64) -> i64 {
        assert!(lo <= hi);
        let width = (hi - lo) as u64 + 1;
        lo + self.below(width) as i64
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.unit() < p
    }

    pub fn choose<'a, T>(&mut self, items: &'a [T]) -> &'a T {
        &items[self.below(items.len() as u64) as usize]
    }

    /// Fisher-Yates, walking from the back.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }

    /// `k` distinct indices from `0..n`, in draw order.
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        let mut pool: Vec<usize> = (0..n).collect();
        let k = k.min(n);
        for i in 0..k {
            let j = i + self.below((n - i) as u64) as usize;
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    }
}
