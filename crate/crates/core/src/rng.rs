//! Seeded randomness.
//!
//! All sampling goes through SplitMix64. A draw with index `i` under seed `s`
//! gets its own generator seeded with `s + (i + 1) * 0x9E3779B97F4A7C15`
//! (wrapping), so parallel loops stay reproducible regardless of scheduling.
//! Directions on spheres are normalized standard Gaussians.

use nalgebra::DVector;
use rand::{RngExt, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use rand_xoshiro::SplitMix64;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

pub type Rng64 = SplitMix64;

pub fn seeded(seed: u64) -> Rng64 {
    SplitMix64::seed_from_u64(seed)
}

/// Independent child stream for draw `index`.
pub fn stream(seed: u64, index: u64) -> Rng64 {
    SplitMix64::seed_from_u64(seed.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
}

pub fn gaussian(rng: &mut Rng64) -> f64 {
    StandardNormal.sample(rng)
}

pub fn gaussian_vector(rng: &mut Rng64, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| gaussian(rng))
}

pub fn uniform(rng: &mut Rng64, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return lo;
    }
    rng.random_range(lo..hi)
}

/// Uniform unit vector in `R^n` (n >= 1).
pub fn unit_vector(rng: &mut Rng64, n: usize) -> DVector<f64> {
    loop {
        let v = gaussian_vector(rng, n);
        let norm = v.norm();
        if norm > 1e-12 {
            return v / norm;
        }
    }
}

/// Uniform sample in the closed ball of the given radius.
pub fn in_ball(rng: &mut Rng64, n: usize, radius: f64) -> DVector<f64> {
    let dir = unit_vector(rng, n);
    let r = radius * uniform(rng, 0.0, 1.0).powf(1.0 / n as f64);
    dir * r
}

pub fn index_below(rng: &mut Rng64, n: usize) -> usize {
    rng.random_range(0..n)
}
