//! Portable seeded pseudo-random numbers.
//!
//! Scenes, oracle scores, voxel selection and weight initialisation all draw
//! from [`SplitMix64`] so that a seed reproduces the same output on every
//! platform and in any reimplementation. The stream is part of the file
//! format contract:
//!
//! ```text
//! state <- state + 0x9E3779B97F4A7C15            (wrapping)
//! z     <- state
//! z     <- (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9  (wrapping)
//! z     <- (z ^ (z >> 27)) * 0x94D049BB133111EB  (wrapping)
//! out   <- z ^ (z >> 31)
//! ```
//!
//! Derived quantities:
//!
//! - `next_f64` = `(out >> 11) * 2^-53`, uniform in `[0, 1)`.
//! - `below(n)` = high 64 bits of `out * n` (128-bit product).
//! - `normal()` = Box-Muller on two consecutive `next_f64` draws (cosine branch only).

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitMix64 {
    state: u64,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    /// Independent stream for sub-task `index` of a run seeded with `seed`.
    pub fn derive(seed: u64, index: u64) -> Self {
        let mut base = Self::new(seed ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03));
        Self::new(base.next_u64())
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `0..n`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Fisher-Yates shuffle driven by `below`.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
