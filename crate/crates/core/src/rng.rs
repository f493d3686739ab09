//! Seeded, portable pseudo-random source.
//!
//! All stochastic code in the crate draws from [`SimRng`], a PCG-XSL-RR 128/64
//! generator (`pcg64`). Its 128-bit state and stream are expanded from a 64-bit
//! seed with SplitMix64:
//!
//! ```text
//! s0 = splitmix64(seed), s1 = splitmix64(s0), s2 = ..., s3 = ...
//! state     = (s0 << 64) | s1
//! increment = (s2 << 64) | s3        (the generator forces it odd)
//! ```
//!
//! Derived quantities use only `next_u64`:
//!
//! * uniform in `[0, 1)`: `(next_u64 >> 11) * 2^-53`
//! * uniform integer in `[0, n)`: `floor(uniform * n)`
//! * standard normal: Box-Muller on two uniforms, `u1` mapped to `(0, 1]`,
//!   both outputs used (cosine branch first)
//! * shuffle: Fisher-Yates from the last index down
//!
//! Per-stage seeds are derived from a root seed with [`derive_seed`].

use rand_core::Rng;
use rand_pcg::Pcg64;

/// One SplitMix64 step; returns the output for `state` and leaves the caller to advance.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent seed for a named stage and an index within it.
///
/// `seed = splitmix64(splitmix64(root ^ fnv1a64(label)) ^ index)`
pub fn derive_seed(root: u64, label: &str, index: u64) -> u64 {
    splitmix64(splitmix64(root ^ fnv1a64(label.as_bytes())) ^ index)
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

#[derive(Clone)]
pub struct SimRng {
    inner: Pcg64,
    spare_normal: Option<f64>,
}

impl SimRng {
    pub fn new(seed: u64) -> Self {
        let s0 = splitmix64(seed);
        let s1 = splitmix64(s0);
        let s2 = splitmix64(s1);
        let s3 = splitmix64(s2);
        let state = ((s0 as u128) << 64) | s1 as u128;
        let increment = ((s2 as u128) << 64) | s3 as u128;
        SimRng {
            inner: Pcg64::new(state, increment),
            spare_normal: None,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)`. `n` must be non-zero.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.uniform() * n as f64) as usize).min(n - 1)
    }

    pub fn byte(&mut self) -> u8 {
        (self.next_u64() >> 56) as u8
    }

    pub fn bytes16(&mut self) -> [u8; 16] {
        let mut out = [0u8; 16];
        for b in out.iter_mut() {
            *b = self.byte();
        }
        out
    }

    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn normal(&mut self, sigma: f64) -> f64 {
        sigma * self.standard_normal()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

impl std::fmt::Debug for SimRng {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SimRng").finish_non_exhaustive()
    }
}
