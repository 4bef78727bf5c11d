//! Deterministic derivation of independent random streams.
//!
//! Every stochastic step draws from a stream keyed by `(master seed, purpose, i, j)`,
//! typically `(round, particle)`. The key is used verbatim as the ChaCha key, so
//! results never depend on how work is scheduled across threads.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purposes that partition the key space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Prior = 1,
    Mutation = 2,
    Resampling = 3,
    Noise = 4,
    Truth = 5,
    Replicate = 6,
    Oracle = 7,
}

pub fn stream(seed: u64, purpose: Purpose, i: u64, j: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(purpose as u64).to_le_bytes());
    key[16..24].copy_from_slice(&i.to_le_bytes());
    key[24..].copy_from_slice(&j.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Derives a child master seed, e.g. one per replicate of an experiment.
pub fn child_seed(seed: u64, purpose: Purpose, i: u64) -> u64 {
    use rand::RngCore;
    stream(seed, purpose, i, u64::MAX).next_u64()
}
