//! Seed derivation and the deterministic generator used throughout the crate.
//!
//! Every stochastic operation takes an explicit `u64` seed. Sub-seeds for
//! restarts, refinement steps and ensemble members are derived by hashing
//! `(parent, stream, index)`, so results do not depend on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::grid::Support;

/// Generator used for all seeded draws.
pub type SeededRng = ChaCha8Rng;

/// Named seed streams. Distinct streams never collide for the same parent.
pub mod stream {
    pub const RESTART: u64 = 0x01;
    pub const REFINE_STEP: u64 = 0x02;
    pub const REFINE_START: u64 = 0x03;
    pub const AGGREGATE_RUN: u64 = 0x04;
    pub const AGGREGATE_BRANCH: u64 = 0x05;
    pub const TRAIN_BATCH: u64 = 0x06;
    pub const TRAIN_EPSILON: u64 = 0x07;
    pub const MODEL_INIT: u64 = 0x08;
    pub const SYNTH_RECORD: u64 = 0x09;
    pub const MEASURE: u64 = 0x0a;
    pub const INIT_RECORD: u64 = 0x0b;
    pub const VALIDATION: u64 = 0x0c;
    pub const RECORD_REFINE: u64 = 0x0d;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent child seed from `(parent, stream, index)`.
pub fn derive_seed(parent: u64, stream: u64, index: u64) -> u64 {
    let a = splitmix64(parent);
    let b = splitmix64(a ^ stream.wrapping_mul(0xd6e8_feb8_6659_fd93));
    splitmix64(b ^ index.wrapping_mul(0xa076_1d64_78bd_642f))
}

pub fn rng_from_seed(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Fills a vector with standard normal draws.
pub fn standard_normal_vec(rng: &mut SeededRng, len: usize) -> Vec<f64> {
    (0..len).map(|_| StandardNormal.sample(rng)).collect()
}

/// Standard normal draws on the support pixels of a frame, zero elsewhere.
pub fn support_noise(support: &Support, seed: u64) -> Vec<f64> {
    let mut rng = rng_from_seed(seed);
    support
        .mask()
        .iter()
        .map(|&inside| if inside { StandardNormal.sample(&mut rng) } else { 0.0 })
        .collect()
}
