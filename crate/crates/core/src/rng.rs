//! Reproducible noise source.
//!
//! Uniform bits come from xoshiro256++ seeded through SplitMix64
//! (`rand_xoshiro::Xoshiro256PlusPlus::seed_from_u64`). Standard normals use
//! the Box–Muller transform on two uniforms in (0, 1], caching the second
//! variate. Both algorithms are fully specified, so a given seed produces the
//! same draw sequence on every platform.

use rand::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::image::Image;

const CHAIN_STRIDE: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone)]
pub struct NoiseRng {
    seed: u64,
    inner: Xoshiro256PlusPlus,
    spare: Option<f64>,
}

impl NoiseRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: Xoshiro256PlusPlus::seed_from_u64(seed),
            spare: None,
        }
    }

    /// Independent stream for chain `index` of a batch run with base `seed`.
    pub fn for_chain(seed: u64, index: u64) -> Self {
        Self::new(seed ^ index.wrapping_add(1).wrapping_mul(CHAIN_STRIDE))
    }

    /// Derives a child stream keyed by `tag`, leaving `self` untouched.
    pub fn fork(&self, tag: u64) -> Self {
        Self::for_chain(self.seed.rotate_left(17), tag)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0);
        // Lemire's multiply-shift; the bias is below 2^-40 for the sizes used here.
        ((self.inner.next_u64() as u128 * n as u128) >> 64) as usize
    }

    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn normal_image(&mut self, height: usize, width: usize) -> Image {
        let data = (0..height * width).map(|_| self.normal()).collect();
        Image::from_raw(height, width, data)
    }
}
