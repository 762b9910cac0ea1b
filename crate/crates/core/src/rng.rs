//! Seeded randomness.
//!
//! Every random decision in the crate (crop origins, augmentation draws,
//! weight initialization, synthetic data) comes from a SplitMix64 stream so
//! that results are reproducible from a seed. The exact mappings used for
//! crop origins are spelled out here so that ports to other languages can
//! reproduce them bit for bit:
//!
//! * generator: SplitMix64 with the state initialized to the seed
//!   (`state += 0x9e3779b97f4a7c15`, then the standard xor-shift-multiply
//!   finalizer);
//! * integer in `[0, n)`: the high 64 bits of the 128-bit product
//!   `next_u64() * n`;
//! * unit float: `(next_u64() >> 11) * 2^-53`.

use rand::{RngCore, SeedableRng};
pub use rand_xoshiro::SplitMix64 as Rng;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// Generator whose state starts at `seed`.
pub fn rng(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent stream seed from a base seed and a path of tags
/// (e.g. `[epoch, sample_index]`).
pub fn derive_seed(seed: u64, stream: &[u64]) -> u64 {
    stream
        .iter()
        .fold(mix(seed.wrapping_add(GOLDEN)), |acc, &t| mix(acc ^ mix(t.wrapping_add(GOLDEN))))
}

/// Uniform integer in `[0, n)` by 128-bit multiply-high. `n` must be positive.
#[inline]
pub fn uniform_index(rng: &mut Rng, n: usize) -> usize {
    debug_assert!(n > 0);
    ((rng.next_u64() as u128 * n as u128) >> 64) as usize
}

/// Uniform float in `[0, 1)` with 53 bits of precision.
#[inline]
pub fn unit_f64(rng: &mut Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Deterministic Fisher-Yates permutation of `0..n`.
pub fn permutation(rng: &mut Rng, n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = uniform_index(rng, i + 1);
        idx.swap(i, j);
    }
    idx
}

/// Standard normal draw (Box-Muller, one value per call).
pub fn normal(rng: &mut Rng) -> f64 {
    let u1 = 1.0 - unit_f64(rng);
    let u2 = unit_f64(rng);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
