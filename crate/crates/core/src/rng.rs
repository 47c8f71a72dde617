//! Deterministic random numbers shared by every seeded component.
//!
//! The generator is ChaCha with 8 rounds (`rand_chacha::ChaCha8Rng`), seeded
//! through `SeedableRng::seed_from_u64`. Only raw `next_u64` outputs are
//! consumed; the derived operations below are defined here rather than taken
//! from `rand`'s distribution code, so they stay fixed across `rand` releases
//! and can be re-implemented elsewhere from this description:
//!
//! * `below(n)`: rejection sampling. Draw `x = next_u64()`, reject while
//!   `x >= u64::MAX - (u64::MAX % n)`, return `x % n`.
//! * `unit()`: `(next_u64() >> 11) as f64 * 2^-53`, uniform in `[0, 1)`.
//! * `shuffle`: Fisher–Yates from the back, `for i in (1..len).rev() { swap(i, below(i + 1)) }`.
//! * `sample_indices(n, k)`: the first `k` positions of a partial Fisher–Yates
//!   run from the front: `for i in 0..k { swap(i, i + below(n - i)) }`.
//!
//! Sub-streams are derived with [`derive_seed`], which mixes a parent seed
//! with a label through FNV-1a and one SplitMix64 finalisation round.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct DetRng {
    inner: ChaCha8Rng,
}

impl DetRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform integer in `0..n`. Panics when `n == 0`.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let x = self.next_u64();
            if x < zone {
                return x % n;
            }
        }
    }

    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }

    /// `k` distinct indices from `0..n`, in draw order.
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n, "sample_indices: k > n");
        let mut idx: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.below((n - i) as u64) as usize;
            idx.swap(i, j);
        }
        idx.truncate(k);
        idx
    }
}

/// Stable 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Seed for a named sub-stream of `parent`.
pub fn derive_seed(parent: u64, label: &str) -> u64 {
    let mut z = parent ^ fnv1a(label.as_bytes());
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
