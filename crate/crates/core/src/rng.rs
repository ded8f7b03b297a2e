//! Deterministic, stream-addressed randomness.
//!
//! Every random draw in a run comes from a [`StreamRng`] keyed by the
//! run's master seed and a textual stream id such as
//! `attack/noise/0.04/img_00017`. The generator is counter-based
//! (ChaCha8 keyed by a hash of seed and stream id), which gives two
//! properties the pipeline relies on:
//!
//! - identical `(seed, stream)` always produces the identical byte
//!   sequence, independent of platform or thread schedule;
//! - distinct stream ids produce statistically independent sequences, so
//!   per-image, per-attack, per-strength streams never interact and any
//!   stage can be recomputed in isolation.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Seedable random stream addressed by `(master seed, stream id)`.
#[derive(Debug, Clone)]
pub struct StreamRng {
    seed: u64,
    stream: String,
    inner: ChaCha8Rng,
}

impl StreamRng {
    pub fn new(seed: u64, stream: impl Into<String>) -> Self {
        let stream = stream.into();
        let mut hasher = Sha256::new();
        hasher.update(seed.to_le_bytes());
        hasher.update([0x1f]);
        hasher.update(stream.as_bytes());
        let key: [u8; 32] = hasher.finalize().into();
        StreamRng {
            seed,
            stream,
            inner: ChaCha8Rng::from_seed(key),
        }
    }

    /// Derives the independent stream `<this>/<label>`.
    ///
    /// Children are keyed by path only; how much of the parent stream has
    /// been consumed does not matter.
    pub fn child(&self, label: impl AsRef<str>) -> Self {
        StreamRng::new(self.seed, format!("{}/{}", self.stream, label.as_ref()))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> &str {
        &self.stream
    }

    /// Uniform draw from `[0, 1)`.
    pub fn unit_f64(&mut self) -> f64 {
        // 53 random mantissa bits, the standard dyadic construction.
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw from `[lo, hi)`.
    pub fn range_f64(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit_f64()
    }

    /// Uniform integer from `0..n`. Panics if `n == 0`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0) has no admissible value");
        // Rejection sampling over the widest multiple of n to stay unbiased.
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return (v % n) as usize;
            }
        }
    }

    /// Standard normal draw (Box-free: uses `rand_distr`).
    pub fn standard_normal(&mut self) -> f64 {
        use rand_distr::{Distribution, StandardNormal};
        <StandardNormal as Distribution<f64>>::sample(&StandardNormal, self)
    }

    /// Fisher-Yates shuffle of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.below(i + 1);
            p.swap(i, j);
        }
        p
    }
}

impl RngCore for StreamRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.inner.try_fill_bytes(dest)
    }
}
