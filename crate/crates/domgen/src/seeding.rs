//! Deterministic seed derivation.
//!
//! Every random decision in a run (weight init, batch shuffles, mixup draws,
//! synthetic data) pulls from a [`ChaCha8Rng`] whose seed is *derived* from
//! the run seed and the coordinates of the decision (stage, epoch, step).
//! Nothing carries hidden RNG state across epoch boundaries, which is what
//! makes resuming from a checkpoint bit-identical to an uninterrupted run:
//! epoch 7 draws the same numbers whether or not epochs 0-6 happened in the
//! same process.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; a cheap, well-mixed 64-bit permutation.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Mix an ordered list of words into a single seed.
///
/// Order matters: `mix(&[a, b]) != mix(&[b, a])` in general, so callers can
/// use positional components (run seed, stage, epoch, step) without collisions
/// between unrelated draw sites.
pub fn mix(words: &[u64]) -> u64 {
    let mut acc = 0x51_7c_c1_b7_27_22_0a_95; // arbitrary non-zero start
    for (i, &w) in words.iter().enumerate() {
        acc = splitmix64(acc ^ splitmix64(w.wrapping_add(i as u64 + 1)));
    }
    acc
}

/// RNG for a derived seed. ChaCha8 is portable and identical across
/// platforms, unlike the stdlib's unseeded sources.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Domain-separation tags for the major draw sites.
pub mod site {
    /// Model weight initialisation.
    pub const INIT: u64 = 1;
    /// Per-epoch batch shuffling.
    pub const BATCH: u64 = 2;
    /// Mixup coefficient + pairing draws.
    pub const MIXUP: u64 = 3;
    /// Synthetic dataset generation.
    pub const DATA: u64 = 4;
}

/// Seed for shuffling batches in `epoch` of `stage`.
pub fn batch_seed(run_seed: u64, stage: u64, epoch: u64) -> u64 {
    mix(&[run_seed, site::BATCH, stage, epoch])
}

/// Seed for mixup draws at one optimisation step.
pub fn mixup_seed(run_seed: u64, epoch: u64, step: u64) -> u64 {
    mix(&[run_seed, site::MIXUP, epoch, step])
}

/// Seed for model parameter initialisation.
pub fn init_seed(run_seed: u64) -> u64 {
    mix(&[run_seed, site::INIT])
}
