//! Deterministic seed derivation.
//!
//! Every random stream in a simulation is keyed by a (master seed, role,
//! index) triple so results do not depend on thread count or execution
//! order. ChaCha8 is used as the generator because its output is stable
//! across platforms and crate versions.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream labels, kept distinct so unrelated streams never collide.
pub mod role {
    pub const INIT: u64 = 0x101;
    pub const STEP: u64 = 0x202;
    pub const DEQUANT: u64 = 0x303;
    pub const NOISE: u64 = 0x404;
    pub const SW_DIST: u64 = 0x505;
}

/// SplitMix64 finalizer; a well-distributed 64-bit mixing function.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Derives a child seed from a parent seed and an index.
pub fn derive(seed: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed).wrapping_add(splitmix64(index)))
}

/// Derives a child seed from a parent seed and two indices.
pub fn derive2(seed: u64, a: u64, b: u64) -> u64 {
    derive(derive(seed, a), b)
}

pub fn chacha(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derive_is_deterministic_and_spreads() {
        assert_eq!(derive(7, 3), derive(7, 3));
        assert_ne!(derive(7, 3), derive(7, 4));
        assert_ne!(derive(7, 3), derive(8, 3));
        // (a, b) ordering matters
        assert_ne!(derive2(7, 1, 2), derive2(7, 2, 1));
    }

    #[test]
    fn chacha_streams_are_reproducible() {
        use rand::RngCore;
        let mut a = chacha(42);
        let mut b = chacha(42);
        assert_eq!(a.next_u64(), b.next_u64());
    }
}
