//! Seeded random streams.
//!
//! Every random draw in the crate flows through a [`ChaCha8Rng`] derived from
//! a master seed and a stream index, so parallel trials reproduce exactly no
//! matter how they are scheduled.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type SimRng = ChaCha8Rng;

/// Well-known stream ids. Trial streams start at [`streams::TRIALS`].
pub mod streams {
    pub const GEOMETRY: u64 = 1;
    pub const SIGNATURES: u64 = 2;
    pub const PHASES: u64 = 3;
    pub const INIT: u64 = 4;
    pub const SHUFFLE: u64 = 5;
    pub const TRIALS: u64 = 1 << 32;
}

/// RNG for `stream` under `seed`.
pub fn stream(seed: u64, stream: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// RNG for Monte Carlo trial `index` under `seed`.
pub fn trial(seed: u64, index: u64) -> SimRng {
    stream(seed, streams::TRIALS + index)
}

/// Derives a child seed, e.g. one scenario seed per dataset entry.
pub fn child_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finalizer over the pair
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One draw of CN(0, 1): independent real and imaginary parts with variance 1/2.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}
