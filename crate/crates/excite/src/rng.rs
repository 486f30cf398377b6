//! Seeded, named RNG streams.
//!
//! Every stochastic component draws from its own stream derived from
//! `(seed, label)`, so simulations replay bit-exactly and policies that
//! share a seed see common random numbers for the process noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stream identified by a label, independent of other labels under the same seed.
pub fn substream(seed: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix(seed ^ fnv1a(label.as_bytes())))
}

/// Per-trial seed derivation for Monte-Carlo batches.
pub fn trial_seed(seed: u64, trial: u64) -> u64 {
    splitmix(splitmix(seed) ^ trial.wrapping_mul(0x2545_f491_4f6c_dd1d))
}
