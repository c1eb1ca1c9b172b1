//! Deterministic random number generation.
//!
//! All stochastic behaviour in this crate (weight init, shuffling, dropout
//! masks, tau sampling) flows through [`Rng`], a ChaCha8 stream cipher RNG
//! seeded from a `u64`. The raw `u64` stream is identical across platforms.
//! Floating-point derivations layered on top (`uniform01`, `normal`) use
//! fixed formulas documented below; `normal` calls `ln`/`cos`/`sqrt`, whose
//! last-bit rounding is in principle libm-dependent, so bit-identical
//! reproducibility is guaranteed per platform and expected (but not
//! guaranteed) across platforms.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

pub struct Rng {
    inner: ChaCha8Rng,
    seed: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            inner: ChaCha8Rng::seed_from_u64(seed),
            seed,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform draw in `[0, 1)`: the top 53 bits of one `u64`, scaled by 2^-53.
    pub fn uniform01(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform01()
    }

    /// Standard normal via Box-Muller: `sqrt(-2 ln u1) * cos(2 pi u2)`
    /// with `u1` drawn from `(0, 1]` to keep the log finite.
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform01();
        let u2 = self.uniform01();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    pub fn normal_scaled(&mut self, mean: f64, std: f64) -> f64 {
        mean + std * self.normal()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform01() < p
    }

    /// Draw an index in `[0, n)`. Uses `next_u64 % n`; the modulo bias is
    /// below 2^-32 for any `n` this crate uses.
    pub fn index(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }

    /// Fisher-Yates permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<u32> {
        let mut order: Vec<u32> = (0..n as u32).collect();
        for i in (1..n).rev() {
            let j = self.index(i + 1);
            order.swap(i, j);
        }
        order
    }
}

/// Derive an independent stream seed from a base seed, SplitMix64-style.
/// Used to give each pipeline phase its own reproducible stream.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
