//! Seed splitting.
//!
//! Every random stream in a run is derived from the master seed and a
//! `(step, purpose)` pair, so adding steps to a plan never perturbs the
//! randomness of earlier steps. The mixing function is SplitMix64.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a derived stream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Data = 1,
    ControllerInit = 2,
    Training = 3,
    JsEstimate = 4,
    Prototype = 5,
    ClassSamples = 6,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `splitmix64(splitmix64(splitmix64(master) ^ step) ^ purpose)`.
pub fn derive_seed(master: u64, step: u64, purpose: Purpose) -> u64 {
    let a = splitmix64(master);
    let b = splitmix64(a ^ step);
    splitmix64(b ^ purpose as u64)
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
