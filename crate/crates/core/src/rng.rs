//! Seeded random streams.
//!
//! Every consumer draws from its own named sub-stream derived from one run
//! seed, so adding draws in one module never shifts another module's sequence.
//! The generator is SplitMix64 and the float mapping is fixed here, which keeps
//! sequences identical across platforms.

use rand_xoshiro::rand_core::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;

pub const STREAM_INIT: &str = "init";
pub const STREAM_EXTRACTOR: &str = "extractor";
pub const STREAM_SYNTH: &str = "synth";

#[derive(Clone, Debug)]
pub struct Stream {
    inner: SplitMix64,
}

impl Stream {
    pub fn from_seed(seed: u64) -> Self {
        Self {
            inner: SplitMix64::seed_from_u64(seed),
        }
    }

    /// Sub-stream `name` of the run seed `seed`.
    pub fn named(seed: u64, name: &str) -> Self {
        // FNV-1a over the name, folded into the seed.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in name.as_bytes() {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        let mut mix = SplitMix64::seed_from_u64(seed ^ h);
        Self::from_seed(mix.next_u64())
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    #[inline]
    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `0..n`.
    #[inline]
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0);
        (self.uniform() * n as f64) as usize % n
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn named_streams_are_reproducible_and_distinct() {
        let a: Vec<u64> = (0..4).map({
            let mut s = Stream::named(7, STREAM_INIT);
            move |_| s.next_u64()
        }).collect();
        let b: Vec<u64> = (0..4).map({
            let mut s = Stream::named(7, STREAM_INIT);
            move |_| s.next_u64()
        }).collect();
        let c: Vec<u64> = (0..4).map({
            let mut s = Stream::named(7, STREAM_SYNTH);
            move |_| s.next_u64()
        }).collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn splitmix_reference_value() {
        // First output of SplitMix64 seeded with 0.
        let mut s = Stream::from_seed(0);
        assert_eq!(s.next_u64(), 0xe220_a839_7b1d_cdaf);
    }

    #[test]
    fn uniform_in_unit_interval() {
        let mut s = Stream::from_seed(3);
        for _ in 0..1000 {
            let u = s.uniform();
            assert!((0.0..1.0).contains(&u));
        }
    }
}
