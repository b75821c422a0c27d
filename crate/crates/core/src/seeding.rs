//! Deterministic derivation of independent named RNG streams.
//!
//! Experiments need several unrelated random streams per repeat (model init,
//! shuffling, perturbation noise, attack training, ...). Deriving them all
//! from `base_seed + repeat` with a *named* mixing step keeps streams
//! independent of each other while staying reproducible from a single
//! integer in the config.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Derives a child seed from `seed` and a stream name.
///
/// FNV-1a over the name folded into the seed, then finalized with the
/// SplitMix64 mixer so that adjacent seeds and similar names land far apart.
#[must_use]
pub fn derive_seed(seed: u64, name: &str) -> u64 {
    const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = FNV_OFFSET ^ seed;
    for byte in name.as_bytes() {
        h ^= u64::from(*byte);
        h = h.wrapping_mul(FNV_PRIME);
    }
    splitmix64(h)
}

/// Seeds a ChaCha8 stream for `name` derived from `seed`.
#[must_use]
pub fn stream(seed: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, name))
}

/// SplitMix64 finalizer; full-avalanche 64-bit mixing.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
