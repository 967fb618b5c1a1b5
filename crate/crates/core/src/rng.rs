//! Deterministic counter-based pseudo-random sampling.
//!
//! All randomness in the crate flows from a single 64-bit root seed, fanned
//! out hierarchically: `root.derive(module_salt).derive(instance_index)`.
//! The generator is SplitMix64, so a given seed always reproduces the same
//! byte-identical sample stream regardless of platform or build.

use crate::{Error, Result};

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const DERIVE_MIX: u64 = 0xD2B7_4407_B1CE_6E93;

/// Counter-based PRNG state. Cloning forks the stream at its current position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngState {
    seed: u64,
    counter: u64,
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        RngState { seed, counter: 0 }
    }

    /// Derive an independent child stream. The same (seed, salt) pair always
    /// yields the same child, which is the basis of the hierarchical
    /// root -> module -> instance seeding scheme.
    pub fn derive(&self, salt: u64) -> RngState {
        RngState::new(mix64(self.seed ^ salt.wrapping_mul(DERIVE_MIX) ^ GOLDEN_GAMMA))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.seed.wrapping_add(self.counter.wrapping_mul(GOLDEN_GAMMA)))
    }

    /// Uniform draw in [0, 1) with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in [0, n).
    pub fn below(&mut self, n: u64) -> u64 {
        // Modulo bias is irrelevant for the small n used here.
        self.next_u64() % n
    }
}

/// Draw from N(mean, sigma^2) by the Box-Muller transform. Always consumes
/// exactly two uniforms so the stream position does not depend on sigma.
pub fn sample_normal(mean: f64, sigma: f64, rng: &mut RngState) -> Result<f64> {
    if sigma < 0.0 {
        return Err(Error::InvalidSigma(sigma));
    }
    // u1 in (0, 1] so the log is finite.
    let u1 = ((rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
    let u2 = rng.next_f64();
    let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
    Ok(mean + sigma * z)
}
