//! Seeded random streams.
//!
//! All stochastic routines take a generic `R: Rng`; the crate's own entry
//! points that start from a bare `u64` seed use [`SimRng`].

use rand::{Rng, SeedableRng};

pub type SimRng = rand_chacha::ChaCha8Rng;

pub fn seeded(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

/// Seed for the `index`-th independent stream derived from `base`.
#[inline]
pub fn derive_seed(base: u64, index: u64) -> u64 {
    base.wrapping_add(index)
}

/// Uniform draw from `[0, 1)`.
#[inline]
pub fn uniform<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.random::<f64>()
}

/// ±1 with `P(+1) = (1 + mean) / 2`.
#[inline]
pub fn spin_with_mean<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> i8 {
    if uniform(rng) < 0.5 * (1.0 + mean) {
        1
    } else {
        -1
    }
}

#[inline]
pub fn fair_spin<R: Rng + ?Sized>(rng: &mut R) -> i8 {
    if rng.random::<bool>() {
        1
    } else {
        -1
    }
}

/// Standard normal draw (Box-Muller, one value per call).
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    // 1 - u keeps the log argument in (0, 1]
    let u1 = 1.0 - uniform(rng);
    let u2 = uniform(rng);
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(core::f64::consts::TAU * u2)
}

/// Fisher-Yates shuffle of `0..n`.
pub fn permutation<R: Rng + ?Sized>(n: usize, rng: &mut R) -> alloc::vec::Vec<usize> {
    use rand::seq::SliceRandom;
    let mut idx: alloc::vec::Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx
}
