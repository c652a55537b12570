//! Seeded randomness.
//!
//! All stochastic pieces of the framework (corpus generation, dropout,
//! PGD random starts, VIPER flips, poison selection, ...) draw from
//! ChaCha8, a counter-based stream generator. Independent streams are
//! derived from one root seed so that concurrent evaluation cells never
//! see each other's draws and reruns are bit-identical.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Name of the generator recorded in dataset metadata and reports.
pub const RNG_NAME: &str = "chacha8";

/// A seeded generator for one purpose-labelled stream.
pub fn stream(seed: u64, stream_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng
}

/// Derives a child seed for an enumerated cell (e.g. one matrix entry).
///
/// SplitMix64 finalizer over `(seed, index)`; documented so external
/// tooling can reproduce per-cell seeds from the global one.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream ids, one per subsystem, so seeds never collide across purposes.
pub mod streams {
    pub const CORPUS: u64 = 1;
    pub const TRAIN_SHUFFLE: u64 = 2;
    pub const DROPOUT: u64 = 3;
    pub const INIT: u64 = 4;
    pub const PGD_START: u64 = 5;
    pub const VIPER: u64 = 6;
    pub const HEURISTIC: u64 = 7;
    pub const POISON: u64 = 8;
    pub const SWAP: u64 = 9;
    pub const SHUFFLE_EVAL: u64 = 10;
    pub const ADV_TRAIN: u64 = 11;
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_independent_and_deterministic() {
        let mut a = stream(42, streams::CORPUS);
        let mut b = stream(42, streams::CORPUS);
        let mut c = stream(42, streams::DROPOUT);
        let xs: Vec<u64> = (0..8).map(|_| a.gen()).collect();
        let ys: Vec<u64> = (0..8).map(|_| b.gen()).collect();
        let zs: Vec<u64> = (0..8).map(|_| c.gen()).collect();
        assert_eq!(xs, ys);
        assert_ne!(xs, zs);
    }

    #[test]
    fn derived_seeds_differ_by_index() {
        let s0 = derive_seed(42, 0);
        let s1 = derive_seed(42, 1);
        assert_ne!(s0, s1);
        assert_eq!(s0, derive_seed(42, 0));
    }
}
