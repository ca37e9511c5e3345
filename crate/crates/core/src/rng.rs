//! Deterministic random streams.
//!
//! Every stochastic step in the toolkit draws from [`SplitMix64`], a 64-bit
//! generator with published constants (Steele, Lea & Flood, 2014). Streams are
//! derived from structured keys with [`SeedKey`], so the same key always
//! yields the same stream regardless of platform, thread count, or the order
//! in which work items are scheduled.
//!
//! Reference vector: `SplitMix64::new(0)` produces
//! `0xe220a8397b1dcdaf, 0x6e789e6aa1b965f4, 0x06c45d188009454f` first.

use rand_core::RngCore;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;
const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// The SplitMix64 output finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// 64-bit FNV-1a over raw bytes.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    #[inline]
    #[allow(clippy::should_implement_trait)]
    pub fn next(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Unbiased integer in `[0, bound)` (Lemire's multiply-and-reject).
    pub fn below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "bound must be positive");
        let threshold = bound.wrapping_neg() % bound;
        loop {
            let m = u128::from(self.next()) * u128::from(bound);
            if (m as u64) >= threshold {
                return (m >> 64) as u64;
            }
        }
    }

    /// In-place Fisher-Yates shuffle, walking from the last slot down.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}

impl RngCore for SplitMix64 {
    fn next_u32(&mut self) -> u32 {
        (self.next() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        self.next()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let bytes = self.next().to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }
}

/// Builder for a seed derived from an ordered list of components.
///
/// Each component is absorbed as `state = mix64(state ^ value + gamma)`;
/// strings are first reduced with FNV-1a.
#[derive(Clone, Copy, Debug)]
pub struct SeedKey(u64);

impl SeedKey {
    pub fn new(base: u64) -> Self {
        Self(mix64(base.wrapping_add(GOLDEN_GAMMA)))
    }

    pub fn with(self, value: u64) -> Self {
        Self(mix64((self.0 ^ value).wrapping_add(GOLDEN_GAMMA)))
    }

    pub fn with_str(self, value: &str) -> Self {
        self.with(fnv1a(value.as_bytes()))
    }

    pub fn seed(self) -> u64 {
        self.0
    }

    pub fn stream(self) -> SplitMix64 {
        SplitMix64::new(self.0)
    }
}
