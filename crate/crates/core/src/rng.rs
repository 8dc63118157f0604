//! Seeded random streams shared by the generator and the sampler.
//!
//! ChaCha8 keyed by a 64-bit seed, with independent numbered streams. The
//! float and integer draws below are written out here rather than taken from
//! `rand`'s distributions so their output is pinned to this crate.

use std::f64::consts::PI;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub(crate) struct SeededRng(ChaCha8Rng);

impl SeededRng {
    pub(crate) fn stream(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        SeededRng(rng)
    }

    /// Uniform in [0, 1) with 53 random bits.
    pub(crate) fn next(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub(crate) fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next()
    }

    /// Standard normal pair by Box-Muller.
    pub(crate) fn normal_pair(&mut self) -> (f64, f64) {
        let u1 = 1.0 - self.next();
        let u2 = self.next();
        let r = (-2.0 * u1.ln()).sqrt();
        let t = 2.0 * PI * u2;
        (r * t.cos(), r * t.sin())
    }

    /// Uniform integer in `0..n` by rejection.
    pub(crate) fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0);
        let zone = u64::MAX - u64::MAX % n;
        loop {
            let v = self.0.next_u64();
            if v < zone {
                return v % n;
            }
        }
    }

    /// Moves a uniform random `take`-subset of `items` to the front (partial Fisher-Yates).
    pub(crate) fn partial_shuffle<T>(&mut self, items: &mut [T], take: usize) {
        let n = items.len();
        for i in 0..take.min(n) {
            let j = i + self.below((n - i) as u64) as usize;
            items.swap(i, j);
        }
    }
}

pub(crate) fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}
