//! Seeded pseudo-random generation shared by initialization and noise.

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;

/// The single generator type used across the crate.
pub type Prng = Xoshiro256PlusPlus;

pub fn prng(seed: u64) -> Prng {
    Prng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut Prng, lo: f64, hi: f64) -> f64 {
    rng.gen_range(lo..hi)
}

pub fn normal(rng: &mut Prng, sigma: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    sigma * z
}

/// splitmix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stable seed for a sub-task identified by `parts` (e.g. grid-cell coordinates).
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(mix64(base), |acc, &p| mix64(acc ^ mix64(p)))
}

/// FNV-1a over a label, for folding names into [`derive_seed`].
pub fn label_hash(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}
